import os
import json
import hashlib
import logging

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import pandas as pd

from utils.error_handlers import json_safe

REPORT_SCHEMA = 1


def ensure_parent(path):
    """Create the parent directory of an output path"""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    return path


def dumps_report(report):
    """Canonical JSON: schema tag, sorted keys, non-finite floats as strings"""
    payload = dict(json_safe(report))
    payload['schema'] = REPORT_SCHEMA
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + '\n'


def write_report(report, path):
    try:
        with open(ensure_parent(path), 'w', encoding='utf-8') as fh:
            fh.write(dumps_report(report))
    except OSError as e:
        logging.error(f"Report write error: {e}")
        raise
    return path


def config_hash(config_dict):
    text = json.dumps(json_safe(config_dict), sort_keys=True)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()[:16]


def write_csv(frame: pd.DataFrame, path):
    frame.to_csv(ensure_parent(path), index=False, decimal='.', encoding='utf-8')
    return path


def write_png(frame: pd.DataFrame, path, x='x', y='density', title=None, golden=None):
    """Line plot of frame[y] against frame[x], with an optional dashed golden curve"""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(frame[x], frame[y], label=y)
    if golden is not None:
        ax.plot(frame[x], frame[golden], '--', label=golden)
        ax.legend()
    ax.set_xlabel(x)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(ensure_parent(path), dpi=120)
    plt.close(fig)
    return path
