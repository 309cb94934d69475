import os
import json
import time
import logging
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from . import __version__
from .config import Config
from .schemas import NetworkConfig, RunManifest

# Configure logging
logger = logging.getLogger(__name__)


class RunManager:
    """Run directories, CSV tables with a commented header, plot scripts and manifests"""

    def __init__(self, base_dir: Optional[str] = None):
        self.base_dir = base_dir or Config.RUN_DIR
        self._started: Dict[str, float] = {}
        os.makedirs(self.base_dir, exist_ok=True)

        logger.info(f"RunManager initialized with run directory: {self.base_dir}")

    def start_run(self, command: str, cfg: NetworkConfig, seed: Optional[int] = None,
                  arguments: Optional[Dict[str, Any]] = None) -> RunManifest:
        """Create the manifest and directory of a new run"""
        manifest = RunManifest(
            command=command,
            config_hash=cfg.fingerprint(),
            seed=seed,
            arguments={key: str(value) for key, value in (arguments or {}).items()},
            started_at=datetime.now().isoformat(),
            version=__version__,
        )
        os.makedirs(self.run_dir(manifest), exist_ok=True)
        self._started[manifest.manifest_hash] = time.perf_counter()
        logger.info(f"Started run {command} in {self.run_dir(manifest)}")
        return manifest

    def run_dir(self, manifest: RunManifest) -> str:
        """Same command, config, seed and arguments map to the same directory"""
        return os.path.join(self.base_dir, f"{manifest.command}-{manifest.manifest_hash}")

    def _header(self, manifest: RunManifest, cfg: NetworkConfig) -> List[str]:
        lines = [f"# command: {manifest.command}",
                 f"# manifest: {manifest.manifest_hash}",
                 f"# version: {manifest.version}",
                 f"# seed: {manifest.seed}"]
        lines += [f"# config.{key}: {value}" for key, value in cfg.model_dump(by_alias=True).items()]
        lines += [f"# arg.{key}: {value}" for key, value in sorted(manifest.arguments.items())]
        return lines

    def write_csv(self, manifest: RunManifest, name: str, frame: pd.DataFrame, cfg: NetworkConfig) -> str:
        """Write a table whose header block names the manifest hash"""
        path = os.path.join(self.run_dir(manifest), f"{name}.csv")
        try:
            with open(path, 'w', newline='') as handle:
                handle.write("\n".join(self._header(manifest, cfg)) + "\n")
                frame.to_csv(handle, index=False, float_format="%.10g", lineterminator="\n")
        except OSError as e:
            logger.error(f"Failed to write {path}: {e}")
            raise
        manifest.outputs.append(path)
        logger.info(f"Wrote {len(frame)} rows to {path}")
        return path

    def write_plot_script(self, manifest: RunManifest, csv_path: str, x: str, columns: Sequence[str],
                          title: str, logscale: str = "") -> str:
        """gnuplot script plotting the given columns of a CSV written by write_csv"""
        frame = read_csv(csv_path)
        header = list(frame.columns)
        script = os.path.splitext(csv_path)[0] + ".gp"
        lines = [
            "set datafile separator ','",
            "set datafile commentschars '#'",
            "set key autotitle columnhead",
            f"set title '{title}'",
            f"set xlabel '{x}'",
            "set grid",
        ]
        if logscale:
            lines.append(f"set logscale {logscale}")
        plots = [f"'{os.path.basename(csv_path)}' using {header.index(x) + 1}:{header.index(c) + 1} "
                 f"with linespoints title '{c}'" for c in columns]
        lines.append("plot " + ", \\\n     ".join(plots))
        with open(script, 'w') as handle:
            handle.write("\n".join(lines) + "\n")
        manifest.outputs.append(script)
        return script

    def finish_run(self, manifest: RunManifest) -> str:
        """Record wall-clock time and write manifest.json"""
        started = self._started.pop(manifest.manifest_hash, None)
        if started is not None:
            manifest.wall_clock = time.perf_counter() - started
        path = os.path.join(self.run_dir(manifest), "manifest.json")
        data = manifest.model_dump()
        data['manifest_hash'] = manifest.manifest_hash
        with open(path, 'w') as handle:
            json.dump(data, handle, indent=2)
        logger.info(f"Finished run {manifest.command} in {manifest.wall_clock:.2f}s")
        return path


def read_csv(path: str) -> pd.DataFrame:
    """Read a table written by RunManager.write_csv"""
    return pd.read_csv(path, comment='#')


def read_header(path: str) -> Dict[str, str]:
    """Key/value pairs of the commented header block"""
    header = {}
    with open(path) as handle:
        for line in handle:
            if not line.startswith('#'):
                break
            key, _, value = line[1:].partition(':')
            header[key.strip()] = value.strip()
    return header
