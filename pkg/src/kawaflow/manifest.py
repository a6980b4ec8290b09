"""Experiment manifests: key-value configs, seeded task streams, digests and atomic record writes.

A manifest is an INI file.  The ``[manifest]`` section carries ``id``, ``seed``,
optionally ``version`` and ``output`` (directory, relative to the manifest).  Every
other section is a step::

    [sc-k4]
    verb = ising check-sc
    graph = complete:4
    beta = 0.2
    after = other-step            # optional, space separated
    inputs = data/g.txt@<sha256>  # optional digest pins

Remaining keys become ``--key value`` options of the verb (``true`` becomes a bare flag).
Relative paths (``file:`` values, ``model``, ``bases``, ``eps_file``) resolve against the
manifest's directory.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path

import numpy as np

from . import __version__
from .errors import KawaflowError, ParameterError

RESERVED = {"verb", "after", "inputs"}
PATH_KEYS = {"model", "bases", "eps_file"}


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def task_seed(seed: int, task: str) -> int:
    """64-bit seed of the stream for ``task`` under the root ``seed``."""
    tag = int.from_bytes(hashlib.sha256(task.encode()).digest()[:8], "little")
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), tag])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("KAWAFLOW_THREADS", "1")))
    except ValueError:
        raise ParameterError("KAWAFLOW_THREADS must be an integer") from None


def jsonable(x):
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, Path):
        return str(x)
    return x


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=1) + "\n"


def instance_hash(obj) -> str:
    return hashlib.sha256(json.dumps(jsonable(obj), sort_keys=True).encode()).hexdigest()[:16]


def atomic_write(path, data: bytes | str) -> str:
    """Write via a temp file in the same directory and rename; returns the sha256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(raw).hexdigest()


@dataclass
class OutputSink:
    """Collects the files a task writes; everything goes through atomic_write."""

    directory: Path | None
    digests: dict = field(default_factory=dict)

    def _write(self, name: str, data) -> str | None:
        if self.directory is None:
            return None
        d = atomic_write(self.directory / name, data)
        self.digests[name] = d
        return d

    def text(self, name: str, text: str):
        return self._write(name, text)

    def json(self, name: str, obj):
        return self._write(name, dumps(obj))

    def csv(self, name: str, header, rows):
        lines = [",".join(header)]
        for r in rows:
            lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in r))
        return self._write(name, "\n".join(lines) + "\n")

    def f64(self, name: str, arr):
        return self._write(name, np.ascontiguousarray(arr, dtype="<f8").tobytes())


# ---------------------------------------------------------------- manifests


@dataclass
class Step:
    name: str
    verb: list
    options: dict
    after: list
    inputs: dict          # path -> pinned digest or None

    def argv(self) -> list:
        out = list(self.verb)
        for k, v in self.options.items():
            flag = "--" + k.replace("_", "-")
            if v.lower() == "true":
                out.append(flag)
            elif v.lower() != "false":
                out += [flag, v]
        return out


@dataclass
class ExperimentManifest:
    id: str
    seed: int
    version: str
    output: Path
    steps: dict
    source: Path

    def echo(self) -> dict:
        return {"id": self.id, "seed": self.seed, "version": self.version,
                "steps": {s.name: {"verb": " ".join(s.verb), "options": s.options, "after": s.after,
                                   "inputs": s.inputs} for s in self.steps.values()}}


def parse_manifest(path) -> ExperimentManifest:
    path = Path(path)
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as e:
        raise ParameterError(f"{path}: {e}") from None
    if "manifest" not in cp:
        raise ParameterError(f"{path}: missing [manifest] section")
    head = cp["manifest"]
    try:
        seed = int(head.get("seed", "0"))
    except ValueError:
        raise ParameterError(f"{path}: seed must be an integer") from None
    version = head.get("version", __version__)
    if version != __version__:
        raise ParameterError(f"{path}: manifest pinned to version {version}, running {__version__}")
    out = path.parent / head.get("output", f"out/{head.get('id', path.stem)}")
    steps = {}
    for name in cp.sections():
        if name == "manifest":
            continue
        sec = cp[name]
        if "verb" not in sec:
            raise ParameterError(f"{path}: step [{name}] has no verb")
        inputs = {}
        for tok in sec.get("inputs", "").split():
            p, _, dig = tok.partition("@")
            inputs[str((path.parent / p).resolve())] = dig or None
        opts = {k: v for k, v in sec.items() if k not in RESERVED}
        for k, v in opts.items():
            if v.startswith("file:"):
                opts[k] = "file:" + str((path.parent / v[5:]).resolve())
            elif k in PATH_KEYS:
                opts[k] = str((path.parent / v).resolve())
        steps[name] = Step(name, sec["verb"].split(), opts, sec.get("after", "").split(), inputs)
    if not steps:
        raise ParameterError(f"{path}: no steps")
    for s in steps.values():
        for a in s.after:
            if a not in steps:
                raise ParameterError(f"{path}: step [{s.name}] depends on unknown step '{a}'")
    return ExperimentManifest(head.get("id", path.stem), seed, version, out, steps, path)


def verify_inputs(step: Step) -> dict:
    digests = {}
    for p, pinned in step.inputs.items():
        if not os.path.exists(p):
            raise ParameterError(f"step [{step.name}]: input {p} does not exist")
        d = sha256_file(p)
        if pinned is not None and d != pinned:
            raise ParameterError(f"step [{step.name}]: digest mismatch for {p}")
        digests[p] = d
    return digests


def run_manifest(path, execute) -> tuple[int, dict]:
    """Run all steps in dependency order, independent steps concurrently.

    ``execute(argv, seed, out_dir, inputs) -> (status, record)`` runs one verb.
    Returns the worst exit status and the per-step records.
    """
    man = parse_manifest(path)
    ts = TopologicalSorter({s.name: set(s.after) for s in man.steps.values()})
    try:
        ts.prepare()
    except CycleError as e:
        raise ParameterError(f"{path}: dependency cycle {e.args[1]}") from None
    records: dict = {}
    status: dict = {}

    def run(name):
        step = man.steps[name]
        try:
            digests = verify_inputs(step)
            return execute(step.argv(), task_seed(man.seed, f"{man.id}/{name}"), man.output / name, digests)
        except KawaflowError as e:
            raise type(e)(f"step [{name}]: {e}") from e

    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        while ts.is_active():
            ready = sorted(ts.get_ready())
            for name, fut in [(n, pool.submit(run, n)) for n in ready]:
                status[name], records[name] = fut.result()
                ts.done(name)
    echo = man.echo()
    echo["outputs"] = {n: r.get("files", {}) for n, r in sorted(records.items())}
    echo["status"] = status
    atomic_write(man.output / "manifest.json", dumps(echo))
    return max(status.values()), records


def output_digest(directory) -> str:
    """One sha256 over every file below ``directory`` (sorted relative paths and contents)."""
    directory = Path(directory)
    h = hashlib.sha256()
    for p in sorted(q for q in directory.rglob("*") if q.is_file()):
        h.update(str(p.relative_to(directory)).encode())
        h.update(sha256_file(p).encode())
    return h.hexdigest()
