"""Sample DAG which fits a Tobit model from S3 and builds both assignment rules.

The assign task reads the fit pushed by the fit task through its XCom.
"""
import datetime as dt

import pendulum
from airflow import DAG
from policy_transport.operators.policy import PolicyAssignOperator, PolicyFitOperator

with DAG(
    dag_id="example_policy_fit_assign_s3",
    schedule_interval="0 6 * * 1",
    start_date=pendulum.datetime(2022, 1, 1, tz="UTC"),
    catchup=False,
    dagrun_timeout=dt.timedelta(minutes=60),
) as dag:
    fit = PolicyFitOperator(
        task_id="fit",
        config={
            "data": "s3://my-bucket/surveys/vouchers.csv",
            "outcome": "score",
            "treatment": "voucher",
            "covariates": ["age", "sex"],
            "column_map": {"gender": "sex"},
            "intercept": True,
        },
        out="s3://my-bucket/fits/{{ ds }}/",
        replace_on_push=True,
    )

    assign = PolicyAssignOperator(
        task_id="assign",
        config={
            "fit": "{{ ti.xcom_pull(task_ids='fit')['outputs']['fit'] }}",
            "target": "s3://my-bucket/grids/age_sex.json",
            "capacity": 0.5,
            "rules": ["plug_in", "ex_post_bayes"],
            "welfare": {"lambda": 0.0, "eps_robust": 0.8},
            "draws": 2000,
        },
        out="s3://my-bucket/allocations/{{ ds }}/",
        seed=2022,
        replace_on_push=True,
    )

    fit >> assign
