"""Line-delimited JSON protocol server.

Handshake: {"type":"hello","proto":1,"space_hash":...} is answered with
hello_ok when the hash of this server's search-space config matches, or an
error with code "space_mismatch". Each {"type":"train",...} message is
answered by exactly one result (or error) carrying the same arch_id.
Malformed input yields {"type":"error","code":"bad_request",...} and the
connection stays alive. Logs go to stderr; stdout carries only protocol
lines.
"""

from __future__ import annotations

import hashlib
import json
import socket
import sys
from pathlib import Path

from .data import EvsDataset, load_dataset
from .model import ArchError, parse_arch
from .schema import TrainRunConfig
from .training import TrainingError, train_one

PROTO_VERSION = 1


def space_config_hash(space_config: dict) -> str:
    """SHA-256 over canonical JSON (sorted keys, compact separators, UTF-8)."""
    payload = json.dumps(space_config, sort_keys=True,
                         separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


class TrainerServer:
    def __init__(self, dataset: EvsDataset, space_config: dict,
                 cache_dir: str | Path, run_cfg: TrainRunConfig):
        self.dataset = dataset
        self.space_hash = space_config_hash(space_config)
        self.cache_dir = Path(cache_dir)
        self.run_cfg = run_cfg

    # -- message handling

    def handle_line(self, line: str) -> dict:
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict) or "type" not in msg:
                raise ValueError("message must be an object with a 'type' field")
        except ValueError as exc:
            return {"type": "error", "code": "bad_request", "message": str(exc)}
        if msg["type"] == "hello":
            return self._handle_hello(msg)
        if msg["type"] == "train":
            return self._handle_train(msg)
        return {"type": "error", "code": "bad_request",
                "message": f"unknown message type {msg['type']!r}"}

    def _handle_hello(self, msg: dict) -> dict:
        if msg.get("proto") != PROTO_VERSION:
            return {"type": "error", "code": "proto_mismatch",
                    "message": f"supported protocol version is {PROTO_VERSION}"}
        if msg.get("space_hash") != self.space_hash:
            return {"type": "error", "code": "space_mismatch",
                    "message": "search-space config hash does not match"}
        return {"type": "hello_ok", "proto": PROTO_VERSION, "space_hash": self.space_hash}

    def _handle_train(self, msg: dict) -> dict:
        arch_id = msg.get("arch_id")
        try:
            if not arch_id:
                raise ArchError("train message lacks arch_id")
            plan = parse_arch(msg["spec"])
            kd = msg.get("kd") or {}
            cfg = TrainRunConfig(
                epochs=int(msg.get("epochs", self.run_cfg.epochs)),
                batch_size=self.run_cfg.batch_size,
                learning_rate=self.run_cfg.learning_rate,
                kd_weight=float(kd.get("weight", 0.0)),
                seed=int(msg.get("seed", 0)),
                spatial_dropout_rate=self.run_cfg.spatial_dropout_rate,
                stem_dropout_rate=self.run_cfg.stem_dropout_rate,
                d_model=self.run_cfg.d_model,
                val_fraction=self.run_cfg.val_fraction,
                device=self.run_cfg.device,
                embedding_size_from=self.run_cfg.embedding_size_from,
            )
            print(f"[trainer] training {arch_id[:12]} (epochs={cfg.epochs}, "
                  f"kd={cfg.kd_weight if kd.get('teacher_files') else 0})",
                  file=sys.stderr, flush=True)
            outcome = train_one(
                plan, self.dataset, cfg, arch_id,
                cache_dir=self.cache_dir,
                teacher_files=tuple(kd.get("teacher_files", ())),
            )
        except (ArchError, KeyError) as exc:
            return {"type": "error", "arch_id": arch_id, "code": "bad_spec",
                    "message": str(exc)}
        except (TrainingError, Exception) as exc:  # noqa: BLE001 - report, keep serving
            return {"type": "error", "arch_id": arch_id, "code": "train_failed",
                    "message": f"{type(exc).__name__}: {exc}"}
        return {
            "type": "result",
            "arch_id": arch_id,
            "score": outcome.score,
            "metric": outcome.metric_name,
            "per_epoch": list(outcome.per_epoch),
            "preds_file": outcome.preds_file,
        }

    # -- transports

    def serve_stdio(self) -> None:
        for line in sys.stdin:
            if not line.strip():
                continue
            reply = self.handle_line(line)
            print(json.dumps(reply, sort_keys=True), flush=True)

    def serve_tcp(self, host: str, port: int) -> None:
        with socket.create_server((host, port)) as server:
            print(f"[trainer] listening on {host}:{port}", file=sys.stderr, flush=True)
            while True:
                conn, peer = server.accept()
                print(f"[trainer] connection from {peer}", file=sys.stderr, flush=True)
                with conn, conn.makefile("r", encoding="utf-8") as reader, \
                        conn.makefile("w", encoding="utf-8") as writer:
                    for line in reader:
                        if not line.strip():
                            continue
                        writer.write(json.dumps(self.handle_line(line), sort_keys=True) + "\n")
                        writer.flush()


def build_server(data_path, space_config_path, cache_dir,
                 run_cfg: TrainRunConfig | None = None) -> TrainerServer:
    dataset = load_dataset(data_path)
    with open(space_config_path, "r", encoding="utf-8") as fh:
        space_config = json.load(fh)
    cfg = run_cfg if run_cfg is not None else TrainRunConfig()
    if "d_model" in space_config:
        from dataclasses import replace

        cfg = replace(cfg, d_model=int(space_config["d_model"]))
    return TrainerServer(dataset, space_config, cache_dir, cfg)
