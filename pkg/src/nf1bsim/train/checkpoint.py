"""Per-stage text checkpoints and resume-point discovery.

File layout::

    nf1bsim-stage-checkpoint
    format_version: 1
    epoch: 3
    stage_id: 2
    version: 60
    layers: 8x8:tanh,8x2:linear
    loss: mse
    values: 90
    digest: sha256:<hex of the payload text>
    ---
    <one float per line, repr encoding, row-major weights then bias per layer>
"""

from __future__ import annotations

import hashlib
import os
import re
from pathlib import Path

import numpy as np

from ..errors import IntegrityError
from .network import LayerSpec, StageModel

MAGIC = "nf1bsim-stage-checkpoint"
FORMAT_VERSION = 1
HEADER_KEYS = ("format_version", "epoch", "stage_id", "version", "layers", "loss", "values", "digest")
_NAME = re.compile(r"^epoch_(\d+)\.ckpt$")


def checkpoint_path(root, stage_id: int, epoch: int) -> Path:
    return Path(root) / f"stage_{stage_id}" / f"epoch_{epoch:04d}.ckpt"


def _payload(stage: StageModel) -> str:
    vals = []
    for w, b in stage.params():
        vals.extend(repr(float(x)) for x in w.reshape(-1))
        vals.extend(repr(float(x)) for x in b)
    return "\n".join(vals) + "\n"


def dumps_stage(stage: StageModel, epoch: int) -> str:
    payload = _payload(stage)
    layers = ",".join(f"{l.fan_in}x{l.fan_out}:{l.activation}" for l in stage.layers)
    header = [
        MAGIC,
        f"format_version: {FORMAT_VERSION}",
        f"epoch: {epoch}",
        f"stage_id: {stage.stage_id}",
        f"version: {stage.current_version}",
        f"layers: {layers}",
        f"loss: {stage.loss}",
        f"values: {payload.count(chr(10))}",
        f"digest: sha256:{hashlib.sha256(payload.encode()).hexdigest()}",
        "---",
    ]
    return "\n".join(header) + "\n" + payload


def checkpoint_stage(stage: StageModel, epoch: int, path) -> Path:
    """Write the stage's current weights atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_stage(stage, epoch), encoding="ascii")
    os.replace(tmp, path)
    return path


def loads_stage(text: str, *, stage_hint: int | None = None, epoch_hint: int | None = None) -> tuple[StageModel, int]:
    def fail(msg, stage=stage_hint, epoch=epoch_hint):
        raise IntegrityError(msg, stage=stage, epoch=epoch)

    head, sep, payload = text.partition("\n---\n")
    if not sep:
        fail("missing header terminator")
    lines = head.split("\n")
    if lines[0] != MAGIC:
        fail("not a stage checkpoint")
    fields = {}
    for line in lines[1:]:
        key, colon, value = line.partition(": ")
        if not colon or key not in HEADER_KEYS:
            fail(f"malformed header line {line!r}")
        fields[key] = value
    missing = [k for k in HEADER_KEYS if k not in fields]
    if missing:
        fail(f"header lacks {', '.join(missing)}")
    try:
        stage_id, epoch = int(fields["stage_id"]), int(fields["epoch"])
        version, count = int(fields["version"]), int(fields["values"])
        fmt = int(fields["format_version"])
    except ValueError:
        fail("non-integer header field")
    if fmt != FORMAT_VERSION:
        fail(f"unsupported format_version {fmt}", stage_id, epoch)
    if fields["digest"] != "sha256:" + hashlib.sha256(payload.encode()).hexdigest():
        fail("payload digest mismatch (corrupt or truncated file)", stage_id, epoch)
    values = payload.split("\n")
    if values and values[-1] == "":
        values.pop()
    if len(values) != count:
        fail(f"expected {count} values, found {len(values)}", stage_id, epoch)
    try:
        layers = []
        for item in fields["layers"].split(","):
            dims, _, act = item.partition(":")
            fi, fo = dims.split("x")
            layers.append(LayerSpec(int(fi), int(fo), act))
        flat = np.array([float(v) for v in values], dtype=np.float64)
    except ValueError:
        fail("unparseable layer list or payload", stage_id, epoch)
    if sum(l.parameter_count for l in layers) != flat.size:
        fail("payload size does not match layer dimensions", stage_id, epoch)
    params, i = [], 0
    for l in layers:
        w = flat[i : i + l.fan_in * l.fan_out].reshape(l.fan_out, l.fan_in).copy()
        i += w.size
        b = flat[i : i + l.fan_out].copy()
        i += l.fan_out
        params.append((w, b))
    return StageModel(stage_id, layers, {version: params}, version, fields["loss"]), epoch


def restore_stage(path) -> StageModel:
    path = Path(path)
    stage_hint = epoch_hint = None
    m = _NAME.match(path.name)
    if m:
        epoch_hint = int(m.group(1))
    if path.parent.name.startswith("stage_") and path.parent.name[6:].isdigit():
        stage_hint = int(path.parent.name[6:])
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise IntegrityError(f"checkpoint {path} does not exist", stage=stage_hint, epoch=epoch_hint) from None
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError:
        raise IntegrityError("checkpoint is not ASCII text", stage=stage_hint, epoch=epoch_hint) from None
    stage, epoch = loads_stage(text, stage_hint=stage_hint, epoch_hint=epoch_hint)
    if (stage_hint, epoch_hint) != (None, None) and (stage.stage_id, epoch) != (stage_hint, epoch_hint):
        raise IntegrityError(
            f"file records stage {stage.stage_id} epoch {epoch}", stage=stage_hint, epoch=epoch_hint
        )
    return stage


def saved_epochs(root, stage_id: int) -> list[int]:
    d = Path(root) / f"stage_{stage_id}"
    if not d.is_dir():
        return []
    return sorted(int(m.group(1)) for p in d.iterdir() if (m := _NAME.match(p.name)))


def find_resume_epoch(root, workers: int) -> int | None:
    """Latest epoch checkpointed by every stage; None for an empty directory.

    A stage with no checkpoint at all while others have some is an integrity
    failure naming that stage. A stage that lags behind (crash between stage
    writes) just moves the resume point back to the last common epoch.
    """
    per = {s: set(saved_epochs(root, s)) for s in range(1, workers + 1)}
    if not any(per.values()):
        return None
    newest = max(max(e) for e in per.values() if e)
    for s, eps in per.items():
        if not eps:
            raise IntegrityError(f"no checkpoint found for stage {s}", stage=s, epoch=newest)
    common = set.intersection(*per.values())
    if not common:
        lacking = min(s for s, e in per.items() if newest not in e)
        raise IntegrityError("no epoch is checkpointed by every stage", stage=lacking, epoch=newest)
    return max(common)


def save_all(stages: list[StageModel], epoch: int, root) -> list[Path]:
    return [checkpoint_stage(st, epoch, checkpoint_path(root, st.stage_id, epoch)) for st in stages]


def restore_all(root, workers: int, epoch: int) -> list[StageModel]:
    stages = [restore_stage(checkpoint_path(root, s, epoch)) for s in range(1, workers + 1)]
    for s, st in enumerate(stages, start=1):
        if st.stage_id != s:
            raise IntegrityError(f"file holds stage {st.stage_id}", stage=s, epoch=epoch)
    if len({st.current_version for st in stages}) != 1:
        raise IntegrityError("stages disagree on the committed version", stage=None, epoch=epoch)
    return stages
