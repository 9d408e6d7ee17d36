"""Model facade: one entry point to train, sample, save and load.

Bundles are JSON with full float64 round-trip (python's repr-based float
formatting is shortest-exact), so save -> load -> sample reproduces the
exact bytes that sampling before the save would have produced.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .accountant import RdpLedger
from .diffusion import (DENOISER, NOISE_PREDICTOR, DiffusionConfig, TrainedDiffusion,
                        sample_diffusion, train_diffusion)
from .encoding import ColumnSpan, EncodedMatrix, decode
from .errors import BundleError, ConfigError
from .gan import DPWGAN, GanConfig, TrainedGan, sample_gan, train_dpwgan
from .nn import AdamState, Network
from .privacy import PrivacyParams
from .schema import ColumnKind, RawTable, TableSchema

FORMAT_VERSION = 1
MODEL_KINDS = (NOISE_PREDICTOR, DENOISER, DPWGAN)


def train_model(matrix: EncodedMatrix, config: DiffusionConfig | GanConfig,
                seed: int) -> TrainedDiffusion | TrainedGan:
    if isinstance(config, DiffusionConfig):
        return train_diffusion(matrix, config, seed)
    if isinstance(config, GanConfig):
        return train_dpwgan(matrix, config, seed)
    raise ConfigError(f"unknown config type {type(config).__name__}")


def make_config(kind: str, privacy: PrivacyParams | None = None, **options):
    """Build the right config dataclass for a model kind from flat options."""
    if kind in (NOISE_PREDICTOR, DENOISER):
        return DiffusionConfig(variant=kind, privacy=privacy, **options)
    if kind == DPWGAN:
        return GanConfig(privacy=privacy, **options)
    raise ConfigError(f"unknown model kind {kind!r}; choose one of {', '.join(MODEL_KINDS)}")


def sample_encoded(model, rows: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(model, TrainedDiffusion):
        return sample_diffusion(model, rows, rng)
    if isinstance(model, TrainedGan):
        return sample_gan(model, rows, rng)
    raise ConfigError(f"cannot sample from {type(model).__name__}")


def sample_table(model, rows: int, seed: int) -> RawTable:
    rng = np.random.default_rng(seed)
    return decode(sample_encoded(model, rows, rng), model.schema)


def _spans_to_json(spans) -> list[dict]:
    return [
        {"column": s.column, "kind": s.kind.value, "start": s.start, "width": s.width}
        for s in spans
    ]


def _spans_from_json(payload) -> tuple[ColumnSpan, ...]:
    return tuple(
        ColumnSpan(s["column"], ColumnKind(s["kind"]), int(s["start"]), int(s["width"]))
        for s in payload
    )


def _adam_to_json(state: AdamState) -> dict:
    return {"m": state.m.tolist(), "v": state.v.tolist(), "t": state.t}


def _adam_from_json(payload) -> AdamState:
    return AdamState(
        np.asarray(payload["m"], dtype=np.float64),
        np.asarray(payload["v"], dtype=np.float64),
        int(payload["t"]),
    )


def _config_to_json(config) -> dict:
    payload = asdict(config)
    if config.privacy is not None:
        payload["privacy"] = asdict(config.privacy)
    return payload


def _config_from_json(kind: str, payload: dict):
    payload = dict(payload)
    privacy = payload.pop("privacy", None)
    if privacy is not None:
        privacy = PrivacyParams(**privacy)
    payload.pop("variant", None)
    return make_config(kind, privacy=privacy, **payload)


def bundle_dict(model: TrainedDiffusion | TrainedGan) -> dict:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "schema": model.schema.to_json_dict(),
        "spans": _spans_to_json(model.spans),
        "config": _config_to_json(model.config),
        "ledger": model.ledger.to_state(),
        "epsilon_spent": model.epsilon_spent,
        "delta": model.delta,
        "seed": model.seed,
    }
    if isinstance(model, TrainedGan):
        payload["layer_specs"] = model.generator.layer_specs()
        payload["parameters"] = model.generator.params.tolist()
        payload["adam"] = _adam_to_json(model.adam_generator)
        payload["critic"] = {
            "layer_specs": model.critic.layer_specs(),
            "parameters": model.critic.params.tolist(),
            "adam": _adam_to_json(model.adam_critic),
        }
    else:
        payload["layer_specs"] = model.network.layer_specs()
        payload["parameters"] = model.network.params.tolist()
        payload["adam"] = _adam_to_json(model.adam)
    return payload


def save_bundle(model: TrainedDiffusion | TrainedGan, path: str | Path) -> None:
    Path(path).write_text(json.dumps(bundle_dict(model)) + "\n", encoding="utf-8")


def _network_from_json(specs, parameters) -> Network:
    try:
        return Network.from_specs(specs, np.asarray(parameters, dtype=np.float64))
    except (ValueError, KeyError, TypeError) as exc:
        raise BundleError(f"cannot rebuild network: {exc}") from exc


def model_from_dict(payload: dict) -> TrainedDiffusion | TrainedGan:
    try:
        version = payload["format_version"]
        if version != FORMAT_VERSION:
            raise BundleError(f"unsupported bundle format version {version!r}")
        kind = payload["kind"]
        if kind not in MODEL_KINDS:
            raise BundleError(f"unknown model kind {kind!r}")
        schema = TableSchema.from_json_dict(payload["schema"])
        spans = _spans_from_json(payload["spans"])
        config = _config_from_json(kind, payload["config"])
        ledger = RdpLedger.from_state(payload["ledger"])
        raw_spent = payload["epsilon_spent"]
        epsilon_spent = None if raw_spent is None else float(raw_spent)
        seed = int(payload["seed"])
        network = _network_from_json(payload["layer_specs"], payload["parameters"])
        adam = _adam_from_json(payload["adam"])
        if kind == DPWGAN:
            critic_payload = payload["critic"]
            critic = _network_from_json(critic_payload["layer_specs"],
                                        critic_payload["parameters"])
            return TrainedGan(
                kind=kind, schema=schema, spans=spans, generator=network,
                critic=critic, adam_generator=adam,
                adam_critic=_adam_from_json(critic_payload["adam"]),
                config=config, ledger=ledger, epsilon_spent=epsilon_spent,
                seed=seed,
            )
        return TrainedDiffusion(
            kind=kind, schema=schema, spans=spans, network=network, adam=adam,
            config=config, ledger=ledger, epsilon_spent=epsilon_spent, seed=seed,
        )
    except BundleError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"malformed bundle: {exc}") from exc
    except Exception as exc:  # schema/privacy validation failures
        raise BundleError(f"invalid bundle contents: {exc}") from exc


def load_bundle(path: str | Path) -> TrainedDiffusion | TrainedGan:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(f"bundle {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise BundleError(f"bundle {path} must be a JSON object")
    return model_from_dict(payload)
