"""
Run manifests: the record of what a command read and wrote.

Every command ends by writing ``manifest.json`` next to its outputs so a
run can be traced back to the exact config and library versions.
"""
import hashlib
import json
import logging
from pathlib import Path

import numpy as np
import pydantic
import scipy

from . import __version__

logger = logging.getLogger(__name__)


def canonical_config(config):
    """Config as sorted, compact JSON; the config file location is left out."""
    data = config.model_dump(mode='json', exclude={'base_dir'})
    return json.dumps(data, sort_keys=True, separators=(',', ':'))


def config_hash(config):
    return hashlib.sha256(canonical_config(config).encode('utf-8')).hexdigest()


def versions():
    return {
        'holovideo': __version__,
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pydantic': pydantic.VERSION,
    }


class RunManifest:
    """Collects a command's outputs as they are written."""

    def __init__(self, command, config, out_dir):
        self.command = command
        self.config = config
        self.out_dir = Path(out_dir)
        self.outputs = []
        self.extra = {}

    def add(self, *paths):
        for path in paths:
            path = Path(path)
            try:
                relative = path.resolve().relative_to(self.out_dir.resolve())
            except ValueError:
                relative = path
            name = relative.as_posix()
            if name not in self.outputs:
                self.outputs.append(name)
        return paths[0] if len(paths) == 1 else paths

    def as_dict(self):
        return {
            'command': self.command,
            'config_sha256': config_hash(self.config),
            'seed': self.config.seed,
            'versions': versions(),
            'outputs': sorted(self.outputs),
            **self.extra,
        }

    def write(self):
        path = self.out_dir / 'manifest.json'
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + '\n')
        logger.debug("manifest for %s lists %d outputs", self.command, len(self.outputs))
        return path
