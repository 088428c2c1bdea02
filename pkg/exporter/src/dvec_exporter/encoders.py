"""Encoder backends, selected by a model spec string:

  lstm:<checkpoint.pt>  three-layer LSTM voice encoder (torch); accepts a
                        raw state dict or one wrapped as {"model_state": ...}
  proj:<seed>           deterministic seeded projection of mel statistics;
                        no weights needed, intended for tests and dry runs

Every backend maps a batch of [window_frames x 40] mel windows to one
embedding per window; callers renormalize before writing.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class ModelLoadError(RuntimeError):
    pass


class ProjectionEncoder:
    """Unit-norm projection of (mean, std, 1) mel-window statistics."""

    def __init__(self, seed: int, dim: int = 256):
        self.dim = dim
        rng = np.random.default_rng(seed)
        self._weights = rng.standard_normal((dim, 2 * 40 + 1))

    def embed_windows(self, windows: np.ndarray) -> np.ndarray:
        feats = np.concatenate(
            [
                windows.mean(axis=1),
                windows.std(axis=1),
                np.ones((windows.shape[0], 1)),
            ],
            axis=1,
        )
        raw = feats @ self._weights.T
        out = np.maximum(raw, 0.0)
        dead = out.sum(axis=1) <= 0.0
        out[dead] = np.abs(raw[dead])
        return out


class LstmEncoder:
    """Recurrent voice encoder: 3 LSTM layers (hidden 256) over the mel
    window, a linear projection, then ReLU. Inference only, CPU, eval
    mode; a fixed checkpoint gives bit-identical outputs across runs."""

    def __init__(self, checkpoint: str | Path, dim: int = 256):
        try:
            import torch
            from torch import nn
        except ImportError as exc:
            raise ModelLoadError("the lstm backend requires torch") from exc

        self._torch = torch
        self.dim = dim

        class _Net(nn.Module):
            def __init__(self):
                super().__init__()
                self.lstm = nn.LSTM(40, 256, num_layers=3, batch_first=True)
                self.linear = nn.Linear(256, dim)
                self.relu = nn.ReLU()

            def forward(self, mels):
                _, (hidden, _) = self.lstm(mels)
                return self.relu(self.linear(hidden[-1]))

        try:
            state = torch.load(checkpoint, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise ModelLoadError(f"cannot load checkpoint {checkpoint}: {exc}") from exc
        if isinstance(state, dict) and "model_state" in state:
            state = state["model_state"]
        net = _Net()
        try:
            net.load_state_dict(state)
        except Exception as exc:
            raise ModelLoadError(f"{checkpoint}: incompatible state dict ({exc})") from exc
        net.eval()
        self._net = net

    def embed_windows(self, windows: np.ndarray) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            batch = torch.from_numpy(np.ascontiguousarray(windows, dtype=np.float32))
            return self._net(batch).numpy().astype(np.float64)


def load_encoder(spec: str, dim: int = 256):
    kind, _, arg = spec.partition(":")
    if kind == "proj":
        try:
            seed = int(arg or "0")
        except ValueError:
            raise ModelLoadError(f"proj seed must be an integer, got {arg!r}") from None
        return ProjectionEncoder(seed, dim)
    if kind == "lstm":
        if not arg:
            raise ModelLoadError("lstm backend needs a checkpoint path, e.g. lstm:weights.pt")
        return LstmEncoder(arg, dim)
    raise ModelLoadError(f"unknown model spec {spec!r} (expected proj:<seed> or lstm:<ckpt>)")
