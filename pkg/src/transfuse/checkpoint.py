"""Checkpoint container: a zip of ``.npy`` arrays plus a JSON header.

The header (``__meta__.json``) holds the format version and the model
configuration.  Entries carry a fixed timestamp so identical parameters
produce byte-identical files.  ``numpy.load`` can read the arrays directly.
"""
import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, NotFound
from .model import ModelConfig, TransFuseNet

FORMAT_VERSION = 1
META_NAME = "__meta__.json"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _info(name):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def save_checkpoint(model, path, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "extra": extra or {},
    }
    state = model.state_dict()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        zf.writestr(_info(META_NAME), json.dumps(meta, sort_keys=True, indent=1))
        for name in sorted(state):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, state[name].detach().cpu().numpy(), allow_pickle=False)
            zf.writestr(_info(name + ".npy"), buf.getvalue())
    tmp.replace(path)
    return path


def read_checkpoint(path):
    """Returns ``(meta, {name: ndarray})`` without building a model."""
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no such checkpoint: {path}")
    arrays = {}
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read(META_NAME))
        for name in zf.namelist():
            if name.endswith(".npy"):
                with zf.open(name) as f:
                    arrays[name[:-4]] = np.lib.format.read_array(
                        io.BytesIO(f.read()), allow_pickle=False
                    )
    if meta.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {meta.get('format_version')}")
    return meta, arrays


def load_checkpoint(path):
    meta, arrays = read_checkpoint(path)
    model = TransFuseNet(ModelConfig.from_dict(meta["model_config"]))
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    model.load_state_dict(state, strict=True)
    model.eval()
    return model
