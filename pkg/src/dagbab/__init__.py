"""DAG-based asynchronous Byzantine atomic broadcast.

Modules: ``core`` (vertices and the DAG store), ``rbc`` (Bracha broadcast),
``coin`` (perfect coin oracle), ``dag_builder`` and ``orderer`` (the protocol),
``simnet`` (adversarial simulator), ``checker`` (property checks and metrics)
and ``cli``.
"""
__version__ = "0.1.0"
