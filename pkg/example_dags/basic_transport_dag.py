"""Sample basic DAG which solves a transport problem daily."""
import datetime as dt

import pendulum
from airflow import DAG
from policy_transport.operators.policy import PolicyTransportOperator

with DAG(
    dag_id="example_basic_policy_transport",
    schedule_interval="@daily",
    start_date=pendulum.datetime(2022, 1, 1, tz="UTC"),
    catchup=False,
    dagrun_timeout=dt.timedelta(minutes=60),
) as dag:
    ot = PolicyTransportOperator(
        task_id="ot_minimal_h",
        config={
            "problem": "/path/to/my/problem.json",
            "mode": "minimal-h",
            "treatment_weight": 1.0,
        },
        out="/path/to/results/{{ ds }}/",
        retries=2,
    )
