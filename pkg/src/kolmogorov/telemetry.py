"""Run metrics exported to Azure Application Insights through OpenTelemetry."""

import logging
from datetime import datetime, timezone

UTC = timezone.utc
from typing import Any

from azure.monitor.opentelemetry.exporter import AzureMonitorMetricExporter
from opentelemetry import metrics
from opentelemetry.sdk.metrics.export import (
    Gauge,
    Metric,
    MetricsData,
    NumberDataPoint,
    ResourceMetrics,
    ScopeMetrics,
)
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.util.instrumentation import InstrumentationScope

logger = logging.getLogger(__name__)


class MetricValue:
    """A named gauge reading with attributes."""

    def __init__(
        self, name: str, value: float, timestamp: datetime, attributes: dict[str, Any] | None
    ):
        self.name = name
        self.value = value
        self.timestamp = timestamp
        self.attributes = attributes

    def __repr__(self) -> str:
        return f"MetricValue(name={self.name}, value={self.value}, attributes={self.attributes})"


class TelemetryClient:
    """Sends gauges to Application Insights when a connection string is configured."""

    def __init__(self, connection_string: str):
        self._connection_string = connection_string
        self.exporter: AzureMonitorMetricExporter | None = None
        self.meter_provider = metrics.get_meter_provider()

        if connection_string:
            try:
                self.exporter = AzureMonitorMetricExporter(connection_string=connection_string)
                logger.info("Application Insights telemetry initialized")
            except Exception as e:
                logger.error("Failed to initialize Application Insights: %s", str(e))
        else:
            logger.debug("No Application Insights connection string; metrics stay local")

    def export(self, metrics_data: list[MetricValue]) -> None:
        if not self.exporter:
            logger.debug("No exporter configured, skipping export of %d metrics", len(metrics_data))
            return

        exported = []
        for metric in metrics_data:
            attributes = {str(k): str(v) for k, v in (metric.attributes or {}).items()}
            stamp = self.to_ns_time_value(metric.timestamp)
            exported.append(
                Metric(
                    name=metric.name,
                    description=metric.name,
                    unit="1",
                    data=Gauge(
                        [
                            NumberDataPoint(
                                attributes=attributes,
                                start_time_unix_nano=stamp,
                                time_unix_nano=stamp,
                                value=metric.value,
                                exemplars=[],
                            )
                        ]
                    ),
                )
            )

        resource_metrics = ResourceMetrics(
            resource=Resource.create(
                {
                    "service.namespace": "kolmogorov",
                    "service.name": "shifted-kolmogorov",
                    "cloud.role": "solver",
                }
            ),
            scope_metrics=[
                ScopeMetrics(
                    scope=InstrumentationScope(name="iteration-engine", version="0.1.0"),
                    metrics=exported,
                    schema_url="",
                )
            ],
            schema_url="",
        )
        self.exporter.export(MetricsData(resource_metrics=[resource_metrics]))

    def to_ns_time_value(self, dt: datetime) -> int:
        return int(dt.timestamp() * 1e9)


class RunTelemetry:
    """Collects per-iteration metrics of one run and exports them on flush."""

    def __init__(self, client: TelemetryClient, attributes: dict[str, Any]):
        self._client = client
        self._attributes = dict(attributes)
        self.pending: list[MetricValue] = []

    def record_iteration(self, iteration: int, err: float, seconds: float) -> None:
        now = datetime.now(UTC)
        attributes = {**self._attributes, "iteration": iteration}
        self.pending.append(MetricValue("iterative_error", err, now, attributes))
        self.pending.append(MetricValue("iteration_seconds", seconds, now, attributes))

    def flush(self) -> None:
        if self.pending:
            self._client.export(self.pending)
            self.pending = []


def create_telemetry(connection_string: str, attributes: dict[str, Any]) -> RunTelemetry:
    """Create the telemetry sink for one run.

    Args:
        connection_string: Application Insights connection string; empty keeps
            metrics local
        attributes: Attributes attached to every exported gauge

    Returns:
        A RunTelemetry that exports on flush()
    """
    return RunTelemetry(TelemetryClient(connection_string), attributes)
