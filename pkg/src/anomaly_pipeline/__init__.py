"""Early traffic anomaly detection from probe vehicle speed data.

The package covers the full path from raw feeds to incident-level scores:
imputation onto a 5-minute grid, engineered slowdown/recurrence features,
report denoising and ahead-labeling, leakage-safe windowing, a weighted
multi-horizon detector with calibrated alert threshold, incident-level
evaluation, and a synthetic corridor generator to exercise all of it.
"""

from .detector import DetectorParams, HorizonDetector, forward, grad_check, wbce
from .evaluation import AlarmEvent, AlertStream, EvalReport, alert_stream, incident_metrics, step_metrics
from .features import ChannelScaler, FeatureFrame, assemble, encode_time, seasonal_recurrent_speed, slowdown_speed, travel_time_index
from .grid import TimeGrid
from .ingest import IncidentReport, RoadGraph, SegmentSeries, WeatherSeries, impute_all_vehicle, impute_class_speeds, normalize_density, rasterize_reports
from .labeling import LabelBundle, abnormal_slowdown, ahead_label, denoise
from .pipeline import PipelineConfig, run
from .synth import ScenarioConfig, generate
from .thresholding import ThresholdedDetector, f_beta, sweep
from .windowing import SplitSpec, WindowSet, contamination_check, make_windows, split_days

__version__ = "0.1.0"
