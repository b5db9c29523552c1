import os

# Path to the root directory which contains the src directory
ROOT_DIR = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# Path into the mounted volume:
#   set to environment variable MODEL_INPUTS_OUTPUTS_PATH if it exists
#   else: set to default path which would be <path_to_root>/model_inputs_outputs/
MODEL_INPUTS_OUTPUTS = os.environ.get(
    "MODEL_INPUTS_OUTPUTS_PATH", os.path.join(ROOT_DIR, "model_inputs_outputs/")
)

# Path to inputs
INPUT_DIR = os.path.join(MODEL_INPUTS_OUTPUTS, "inputs")
# Path to data directory inside inputs directory
DATA_DIR = os.path.join(INPUT_DIR, "data")
# Synthetic scene datasets
TRAIN_DATASET_FILE_PATH = os.path.join(DATA_DIR, "train.nmsds")
TEST_DATASET_FILE_PATH = os.path.join(DATA_DIR, "test.nmsds")

# Path to model directory
MODEL_PATH = os.path.join(MODEL_INPUTS_OUTPUTS, "model")
# Path to artifacts directory inside model directory
MODEL_ARTIFACTS_PATH = os.path.join(MODEL_PATH, "artifacts")
# Detector checkpoints
STANDARD_CHECKPOINT_PATH = os.path.join(MODEL_ARTIFACTS_PATH, "standard.nmsck")
DEFENDED_CHECKPOINT_PATH = os.path.join(MODEL_ARTIFACTS_PATH, "defended.nmsck")
TRAIN_HISTORY_FILE_PATH = os.path.join(MODEL_ARTIFACTS_PATH, "train_history.csv")
# Fitted latency model
LATENCY_MODEL_FILE_PATH = os.path.join(MODEL_ARTIFACTS_PATH, "latency_model.json")

# Path to outputs
OUTPUT_DIR = os.path.join(MODEL_INPUTS_OUTPUTS, "outputs")
BENCHMARKS_DIR = os.path.join(OUTPUT_DIR, "benchmarks")
BENCHMARK_FILE_PATH = os.path.join(BENCHMARKS_DIR, "nms_benchmark.csv")
LATENCY_DIR = os.path.join(OUTPUT_DIR, "latency")
CAPACITY_FILE_PATH = os.path.join(LATENCY_DIR, "capacity.json")
ATTACKS_DIR = os.path.join(OUTPUT_DIR, "attacks")
DEFENSE_DIR = os.path.join(OUTPUT_DIR, "defense")
SCHEDULE_LOG_FILE_PATH = os.path.join(DEFENSE_DIR, "schedule_log.csv")
EVALUATION_DIR = os.path.join(OUTPUT_DIR, "evaluation")
ANALYSIS_DIR = os.path.join(OUTPUT_DIR, "analysis")

# Path to logs directory inside outputs directory
ERRORS_DIR = os.path.join(OUTPUT_DIR, "errors")


def error_file_path(task_name: str) -> str:
    """Returns the error file used by a task, e.g. outputs/errors/train_error.txt"""
    return os.path.join(ERRORS_DIR, f"{task_name.replace('-', '_')}_error.txt")


# Paths inside the source directory
# Path to source directory
SRC_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
# Path to config directory
CONFIG_DIR = os.path.join(SRC_DIR, "config")
# Path to model config
MODEL_CONFIG_FILE_PATH = os.path.join(CONFIG_DIR, "model_config.json")
# Path to hyperparameters file with default values
DEFAULT_HYPERPARAMETERS_FILE_PATH = os.path.join(
    CONFIG_DIR, "default_hyperparameters.json"
)
ATTACK_CONFIG_FILE_PATH = os.path.join(CONFIG_DIR, "attack_config.json")
DEFENSE_CONFIG_FILE_PATH = os.path.join(CONFIG_DIR, "defense_config.json")
BENCHMARK_CONFIG_FILE_PATH = os.path.join(CONFIG_DIR, "benchmark_config.json")
ANALYSIS_CONFIG_FILE_PATH = os.path.join(CONFIG_DIR, "analysis_config.json")
