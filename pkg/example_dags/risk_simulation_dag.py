"""Sample DAG which estimates risk curves for both rules under both welfare choices."""
import pendulum
from airflow import DAG
from policy_transport.operators.policy import PolicySimulateOperator

with DAG(
    dag_id="example_policy_risk_simulation",
    schedule_interval=None,
    start_date=pendulum.datetime(2022, 1, 1, tz="UTC"),
    catchup=False,
) as dag:
    for n in (200, 500):
        PolicySimulateOperator(
            task_id=f"simulate_n{n}",
            config={
                "n": n,
                "lambdas": [0.0, 1.0],
                "profile": "smoke",
                "tie_mode": "minimal-h",
                "workers": 4,
            },
            out=f"/path/to/results/simulate/n{n}/",
        )
