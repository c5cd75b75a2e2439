"""Constants for the VCSEL RUL toolkit."""

# Failure criterion: output power 1 dB (20%) below its initial value.
DEFAULT_DROP_FRACTION = 0.2
INFANT_MORTALITY_H = 100.0
RUL_CAP_H = 5000.0
DEFAULT_WINDOW = 3
DEFAULT_TRAIN_FRACTION = 0.8

CONDITION_FEATURES = ("oa_um", "tj_c", "i_ma", "t_c", "j_ka_cm2", "r_ohm")
N_CONDITIONS = len(CONDITION_FEATURES)

FLEET_FILE = "fleet.csv"
CONDITIONS_FILE = "conditions.csv"
DATASET_FILE = "dataset.jsonl"
STATS_FILE = "stats.json"
SPLIT_FILE = "split.json"
CHECKPOINT_FILE = "model.ckpt"
LOSS_HISTORY_FILE = "loss_history.csv"
REPORT_FILE = "report.json"
PAIRS_FILE = "pairs.csv"
HISTOGRAM_FILE = "errors_hist.csv"
MANIFEST_FILE = "manifest.json"
COMPARISON_JSON = "comparison.json"
COMPARISON_TEXT = "comparison.txt"
BENCHMARK_FILE = "benchmark.json"

FLEET_HEADER = ("device_id", "time_h", "power_mw")
CONDITIONS_HEADER = ("device_id", *CONDITION_FEATURES, "t_f_h", "censored")
PAIRS_HEADER = ("rul_true_h", "rul_pred_h")
HISTOGRAM_HEADER = ("bin_lo", "bin_hi", "count")
LOSS_HISTORY_HEADER = ("epoch", "train_loss", "val_loss", "best_val_loss")
TRAJECTORY_HEADER = ("t_end_h", "rul_true_h", "rul_pred_h")

CHECKPOINT_FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

VARIANTS = ("hybrid", "cnn_only", "lstm_only", "mlp")
ACTIVATIONS = ("relu", "tanh", "identity")
OPTIMIZERS = ("sgd", "adam")
