"""Constants for the bmacopula package."""

import os
from pathlib import Path
from typing import Literal, get_args

CONFIG_FOLDER = "_config"
SELF_CONFIG_FNAME: str = "config_bmacopula.json5"
SELF_CONFIG_SCHEMA_FNAME: str = "schema_bmacopula.json"
FIXTURE_SYNTH_FNAME: str = "fixture_synth.json5"
FIXTURE_RUN_FNAME: str = "fixture_run.json5"
CWD: Path = Path(os.getcwd())

KernelFamily = Literal["gaussian", "gamma", "precip"]
Method = Literal["raw", "independence", "copula"]
VariableName = Literal["maxwsp", "precip", "mintemp", "maxtemp", "pressure"]

# Variable ordering follows the station correlation tables.
VARIABLES: tuple[str, ...] = get_args(VariableName)
KERNEL_FAMILY: dict[str, KernelFamily] = {
    "maxwsp": "gamma",
    "precip": "precip",
    "mintemp": "gaussian",
    "maxtemp": "gaussian",
    "pressure": "gaussian",
}
VARIABLE_UNITS: dict[str, str] = {
    "maxwsp": "m/s",
    "precip": "mm",
    "mintemp": "degC",
    "maxtemp": "degC",
    "pressure": "mb",
}
NONNEGATIVE_VARIABLES: frozenset[str] = frozenset({"maxwsp", "precip"})
METHODS: tuple[Method, ...] = get_args(Method)

DEFAULT_WINDOW = 40
DEFAULT_SAMPLE_SIZE = 20_000
MIN_SAMPLE_SIZE = 100

# EM
EM_MAX_ITER = 200
EM_REL_TOL = 1e-6
EM_RESTARTS = 3
VARIANCE_FLOOR = 1e-6
LINK_FLOOR = 1e-4
WIND_CALM_THRESHOLD = 0.1
LOGISTIC_RIDGE = 1e-4

# copula
LATENT_CLAMP = 1e-12
PD_EIGEN_FLOOR = 1e-8
QUANTILE_TABLE_SIZE = 2048

# verification
WEISZFELD_TOL = 1e-9
WEISZFELD_MAX_ITER = 500

# outputs
CORR_FNAME_TEMPLATE = "corr_{station}.json"
FORECAST_DIR = "forecasts"
FORECAST_INDEX_FNAME = "index.json"
SCORES_CSV_FNAME = "scores.csv"
SCORES_BY_STATION_CSV_FNAME = "scores_by_station.csv"
SCORES_JSON_FNAME = "scores.json"
MRH_FNAME_TEMPLATE = "mrh_{method}.csv"
MANIFEST_FNAME = "manifest.json"

# Latent correlation estimated at a coastal airport station; used as the default
# ground truth of the synthetic generator. Ordered as VARIABLES.
REFERENCE_CORRELATION: tuple[tuple[float, ...], ...] = (
    (1.0, -0.016, 0.032, 0.139, -0.123),
    (-0.016, 1.0, -0.001, -0.174, -0.015),
    (0.032, -0.001, 1.0, 0.239, -0.110),
    (0.139, -0.174, 0.239, 1.0, -0.203),
    (-0.123, -0.015, -0.110, -0.203, 1.0),
)
