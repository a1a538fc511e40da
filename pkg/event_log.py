import logging

logger = logging.getLogger(__name__)

LOG_HEADER = "epoch\tmean_objective\tfull_elbo\tjitter_escalations"


def format_record(record):
    """One tab-separated line per epoch; an unevaluated full ELBO prints as nan."""
    return f"{record.epoch}\t{record.mean_objective!r}\t{record.full_elbo!r}\t{record.jitter_escalations}"


def training_log_path(checkpoint_path):
    return f"{checkpoint_path}.log.tsv"


def write_training_log(log, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(LOG_HEADER + "\n")
        for record in log.records:
            f.write(format_record(record) + "\n")
    logger.info(f"training log written to {path}")


def read_training_log(path):
    """Rows of ``(epoch, mean_objective, full_elbo, jitter_escalations)``."""
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    for line in lines[1:]:
        epoch, objective, full, escalations = line.split("\t")
        rows.append((int(epoch), float(objective), float(full), int(escalations)))
    return rows
