"""
OpenTelemetry tracing for solver runs.

One span per mesh level (`bangbang.level`) carries the problem parameters and
the final counters; every outer iteration is added to it as a span event
(`bangbang.iteration`) with residual, merit or objective, trust radius, rho
and the work counters reached so far.

Without `setup_tracing` the global no-op tracer provider is used.
"""

import logging
import math
from contextlib import contextmanager
from typing import Any, Dict, Optional

from opentelemetry import trace
from opentelemetry.trace import Status, StatusCode

logger = logging.getLogger(__name__)

ITERATION_ATTRIBUTES = (
    'iteration',
    'residual',
    'merit',
    'objective',
    'radius',
    'trial_radius',
    'rho',
    'step',
    'contraction',
    'cg_iterations',
    'boundary_hit',
    'accepted',
    'solves',
    'factorizations',
)


def _attribute_value(value: Any):
    if isinstance(value, bool):
        return value
    if isinstance(value, int):
        return value
    value = float(value)
    # OTLP attributes cannot hold nan/inf portably
    return value if math.isfinite(value) else str(value)


class SolverTraceHook:
    """Turn solver iteration callbacks into spans and span events."""

    def __init__(self, tracer: Optional[trace.Tracer] = None):
        self.tracer = tracer or trace.get_tracer(__name__)
        self.current_span = None

    @contextmanager
    def level(self, case: str, n: int, nodes: int, u_bound: float, alpha: float):
        with self.tracer.start_as_current_span("bangbang.level") as span:
            span.set_attribute("bangbang.case", case)
            span.set_attribute("bangbang.n", n)
            span.set_attribute("bangbang.nodes", nodes)
            span.set_attribute("bangbang.u_bound", float(u_bound))
            span.set_attribute("bangbang.alpha", float(alpha))
            self.current_span = span
            try:
                yield self
            finally:
                self.current_span = None

    def on_iteration(self, row: Dict[str, Any]) -> None:
        if self.current_span is None:
            return
        attributes = {
            f"iteration.{key}": _attribute_value(row[key])
            for key in ITERATION_ATTRIBUTES
            if key in row and row[key] is not None
        }
        self.current_span.add_event(name="bangbang.iteration", attributes=attributes)

    def record_outcome(self, record) -> None:
        """Attach final counters and set the span status from the convergence flag."""
        span = self.current_span
        if span is None:
            return
        span.set_attribute("bangbang.iterations", record.iterations)
        span.set_attribute("bangbang.factorizations", record.factorizations)
        span.set_attribute("bangbang.solves", record.solves)
        span.set_attribute("bangbang.converged", record.converged)
        span.set_attribute("bangbang.degenerate_elements", record.degenerate_elements)
        if record.converged:
            span.set_status(Status(StatusCode.OK))
        else:
            span.set_status(Status(StatusCode.ERROR, "level did not converge"))
            for warning in record.warnings:
                span.add_event(name="bangbang.warning", attributes={"message": warning})


def setup_tracing(
    service_name: str = "bangbang",
    otlp_endpoint: Optional[str] = None,
    console: bool = False,
):
    """
    Install an SDK tracer provider.

    Args:
        service_name: Service name attached to every span
        otlp_endpoint: OTLP/HTTP collector endpoint; spans are not exported over OTLP when None
        console: Also print finished spans to stdout

    Returns:
        The installed TracerProvider
    """
    from opentelemetry.sdk.resources import Resource
    from opentelemetry.sdk.trace import TracerProvider
    from opentelemetry.sdk.trace.export import BatchSpanProcessor, ConsoleSpanExporter

    provider = TracerProvider(resource=Resource.create({"service.name": service_name}))

    if otlp_endpoint:
        from opentelemetry.exporter.otlp.proto.http.trace_exporter import OTLPSpanExporter

        endpoint = otlp_endpoint.rstrip('/')
        if not endpoint.endswith('/v1/traces'):
            endpoint += '/v1/traces'
        provider.add_span_processor(BatchSpanProcessor(OTLPSpanExporter(endpoint=endpoint)))
        logger.info("exporting traces to %s", endpoint)

    if console:
        provider.add_span_processor(BatchSpanProcessor(ConsoleSpanExporter()))

    trace.set_tracer_provider(provider)
    return provider
