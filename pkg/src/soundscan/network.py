"""The full embedding network: two spectrogram branches plus a spectrum branch.

Branch one encodes the whole spectrogram with a gated residual stack; branch
two scans the spectrogram with multi-scale kernel boxes and pushes every
patch stack through one weight-shared patch encoder; branch three encodes
the utterance-level spectrum with strided 1-D convolutions. The three
embeddings are concatenated and L2-normalized.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .checkpoint import load_container
from .config import ModelConfig, RunConfig, parse_config_text
from .dsp import AudioClip, fix_length, stft_magnitude, utterance_spectrum
from .errors import ConfigError, DataError
from .scanning import plan_from_counts, plan_from_steps, scan_array, usable_kernels


def conv_out(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


class SpectrogramEncoder(nn.Module):
    """Gated residual stack over the full spectrogram; global max pool."""

    def __init__(self, F, T, stem_channels, stage_channels, reduction, rng):
        super().__init__()
        self.se_in = nn.MultiAxisSE(1, F, T, reduction, rng)
        self.stem = nn.Conv2d(1, stem_channels, (7, 7), (2, 2), (3, 3), rng, bias=False)
        self.stem_bn = nn.BatchNorm2d(stem_channels)
        trace = [(conv_out(F, 7, 2, 3), conv_out(T, 7, 2, 3))]
        h, w = trace[0]
        h, w = conv_out(h, 3, 2, 1), conv_out(w, 3, 2, 1)  # stem max pool
        trace.append((h, w))
        self.se_stem = nn.MultiAxisSE(stem_channels, h, w, reduction, rng)

        blocks = []
        c_prev = stem_channels
        for stage, c in enumerate((stem_channels,) + tuple(stage_channels)):
            stride = 1 if stage == 0 else 2
            blocks.append(nn.ResBlock2d(c_prev, c, stride, rng))
            if stride == 2:
                h, w = conv_out(h, 3, 2, 1), conv_out(w, 3, 2, 1)
                trace.append((h, w))
            blocks.append(nn.MultiAxisSE(c, h, w, reduction, rng))
            blocks.append(nn.ResBlock2d(c, c, 1, rng))
            c_prev = c
        self.blocks = nn.Sequential(*blocks)
        self.out_dim = stage_channels[-1]
        self.final_hw = (h, w)
        self.spatial_trace = tuple(trace)
        self._config = (stem_channels, tuple(stage_channels))

    def forward(self, x: Tensor) -> Tensor:
        x = self.se_in(x)
        x = self.stem_bn(self.stem(x)).relu()
        x = ad.max_pool2d(x, (3, 3), (2, 2), (1, 1))
        x = self.se_stem(x)
        x = self.blocks(x)
        x = ad.max_pool2d(x, self.final_hw)
        return x.reshape(x.shape[0], self.out_dim)

    def describe(self):
        stem_channels, stage_channels = self._config
        rows = [
            ("multi_axis_se", "-", "-", "-", "-"),
            ("conv2d", 1, stem_channels, (7, 7), (2, 2)),
            ("max_pool", "-", "-", (3, 3), (2, 2)),
            ("multi_axis_se", "-", "-", "-", "-"),
            ("res_block", 1, stem_channels, (3, 3), (1, 1)),
            ("multi_axis_se", "-", "-", "-", "-"),
            ("res_block", 1, stem_channels, (3, 3), (1, 1)),
        ]
        for c in stage_channels:
            rows += [
                ("res_block", 1, c, (3, 3), (2, 2)),
                ("multi_axis_se", "-", "-", "-", "-"),
                ("res_block", 1, c, (3, 3), (1, 1)),
            ]
        rows.append(("global_max_pool", "-", "-", self.final_hw, self.final_hw))
        return rows


class PatchEncoder(nn.Module):
    """Weight-shared encoder mapping any (N, h, w) patch stack to one embedding.

    Patches run through the residual stack as independent 1-channel images;
    statistics pooling over all patches and spatial positions absorbs the
    varying N, h, w.
    """

    def __init__(self, channels, embed_dim, hidden_dim, rng):
        super().__init__()
        c1, c2, c3 = channels
        self.block1 = nn.ResBlock2d(1, c1, 2, rng)
        self.block2 = nn.ResBlock2d(c1, c2, 2, rng)
        self.block3 = nn.ResBlock2d(c2, c3, 1, rng)
        self.fc1 = nn.Linear(2 * c3, hidden_dim, rng)
        self.fc2 = nn.Linear(hidden_dim, embed_dim, rng)
        self.out_channels = c3
        self.embed_dim = embed_dim
        self._config = (tuple(channels), hidden_dim, embed_dim)

    def forward(self, stack: Tensor) -> Tensor:
        B, N, h, w = stack.shape
        x = stack.reshape(B * N, 1, h, w)
        x = self.block3(self.block2(self.block1(x)))
        _, C, hp, wp = x.shape
        x = x.reshape(B, N, C, hp, wp).transpose((0, 2, 1, 3, 4))
        x = ad.stats_pool(x)
        return self.fc2(self.fc1(x).relu())

    def describe(self):
        (c1, c2, c3), hidden, embed = self._config
        return [
            ("res_block", 2, (c1, c2), (3, 3), (2, 2)),
            ("res_block", 1, c3, (3, 3), (1, 1)),
            ("stats_pool", 1, "-", "-", "-"),
            ("linear", 1, hidden, "-", "-"),
            ("linear", 1, embed, "-", "-"),
        ]


class MultiScaleBranch(nn.Module):
    """Scan with every kernel, encode with the shared patch encoder,
    concatenate the K per-scale embeddings and refine to one."""

    def __init__(self, n_kernels, channels, embed_dim, hidden_dim, rng):
        super().__init__()
        self.encoder = PatchEncoder(channels, embed_dim, hidden_dim, rng)
        self.merge = nn.Linear(n_kernels * embed_dim, embed_dim, rng)

    def forward(self, stacks) -> Tensor:
        embeddings = [self.encoder(stack) for stack in stacks]
        joined = embeddings[0] if len(embeddings) == 1 else ad.concat(embeddings, axis=1)
        return self.merge(joined).relu()


class SpectrumEncoder(nn.Module):
    """Strided 1-D convolutions, flatten, then a small linear stack."""

    def __init__(self, input_len, channels, kernels, strides, linear_width,
                 linear_count, rng):
        super().__init__()
        convs = []
        length = input_len
        c_prev = 1
        for c, k, s in zip(channels, kernels, strides):
            if length < k:
                raise ConfigError(
                    f"spectrum length {length} shorter than conv kernel {k}; "
                    "adjust spectrum_kernels/strides for this clip length")
            convs.append(nn.Conv1d(c_prev, c, k, s, rng))
            length = (length - k) // s + 1
            c_prev = c
        self.convs = nn.Sequential(*convs)
        self.flat_dim = c_prev * length
        linears = [nn.Linear(self.flat_dim, linear_width, rng)]
        linears += [nn.Linear(linear_width, linear_width, rng)
                    for _ in range(linear_count - 1)]
        self.linears = nn.Sequential(*linears)
        self.out_dim = linear_width
        self._config = (tuple(channels), tuple(kernels), tuple(strides),
                        linear_width, linear_count)

    def forward(self, x: Tensor) -> Tensor:
        B = x.shape[0]
        x = x.reshape(B, 1, x.shape[1])
        for conv in self.convs.layers:
            x = conv(x).relu()
        x = x.reshape(B, self.flat_dim)
        for i, lin in enumerate(self.linears.layers):
            x = lin(x)
            if i < len(self.linears.layers) - 1:
                x = x.relu()
        return x

    def describe(self):
        channels, kernels, strides, width, count = self._config
        rows = [("conv1d", 1, c, k, s) for c, k, s in zip(channels, kernels, strides)]
        rows.append(("flatten", "-", "-", "-", "-"))
        rows.append(("linear", count, width, "-", "-"))
        return rows


class MultiScaleNet(nn.Module):
    """Three-branch embedding model over (spectrogram, spectrum) features."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        F, T = cfg.freq_bins, cfg.frames
        self.kernels = usable_kernels(cfg.kernels, F, T)
        if not self.kernels:
            raise ConfigError(f"no kernel from {list(map(str, cfg.kernels))} fits a "
                              f"{F}x{T} spectrogram")
        if cfg.scan_mode == "steps":
            self.plans = [plan_from_steps(F, T, k, cfg.f_step, cfg.t_step)
                          for k in self.kernels]
        else:
            self.plans = [plan_from_counts(F, T, k, cfg.n_f, cfg.n_t)
                          for k in self.kernels]

        rng = np.random.default_rng(cfg.seed if cfg.seed is not None else 0)
        self.spectrogram_encoder = SpectrogramEncoder(
            F, T, cfg.stem_channels, cfg.stage_channels, cfg.se_reduction, rng)
        self.patch_branch = MultiScaleBranch(
            len(self.kernels), cfg.patch_channels, cfg.patch_embed_dim,
            cfg.patch_hidden_dim, rng)
        self.spectrum_encoder = SpectrumEncoder(
            cfg.spectrum_bins, cfg.spectrum_channels, cfg.spectrum_kernels,
            cfg.spectrum_strides, cfg.spectrum_linear_width,
            cfg.spectrum_linear_count, rng)
        self.embed_dim = (self.spectrogram_encoder.out_dim
                          + cfg.patch_embed_dim + self.spectrum_encoder.out_dim)

    def scan_batch(self, spec_batch: np.ndarray):
        """Per-kernel patch stacks (B, N_k, h, w) from a (B, F, T) batch."""
        stacks = []
        for box, plan in zip(self.kernels, self.plans):
            fp = np.asarray(plan.f_positions, dtype=np.intp)
            tp = np.asarray(plan.t_positions, dtype=np.intp)
            stacks.append(Tensor(scan_array(spec_batch, box.h, box.w, fp, tp)))
        return stacks

    def forward(self, spec_batch: np.ndarray, spectrum_batch: np.ndarray) -> Tensor:
        spec_batch = np.asarray(spec_batch, dtype=np.float64)
        spectrum_batch = np.asarray(spectrum_batch, dtype=np.float64)
        B, F, T = spec_batch.shape
        if (F, T) != (self.cfg.freq_bins, self.cfg.frames):
            raise DataError(f"spectrogram batch is {F}x{T}, model expects "
                            f"{self.cfg.freq_bins}x{self.cfg.frames}")
        e_spec = self.spectrogram_encoder(Tensor(spec_batch.reshape(B, 1, F, T)))
        e_patch = self.patch_branch(self.scan_batch(spec_batch))
        e_spectrum = self.spectrum_encoder(Tensor(spectrum_batch))
        joined = ad.concat([e_spec, e_patch, e_spectrum], axis=1)
        norms = ((joined * joined).sum(axis=1, keepdims=True) + 1e-24) ** 0.5
        return ad.div(joined, norms)

    def describe(self):
        return {
            "spectrogram_encoder": self.spectrogram_encoder.describe(),
            "patch_encoder": self.patch_branch.encoder.describe(),
            "spectrum_encoder": self.spectrum_encoder.describe(),
        }


def clip_features(clip: AudioClip, cfg: ModelConfig):
    """(spectrogram, spectrum) arrays for one clip, after length fixing."""
    if clip.sample_rate != cfg.sample_rate:
        raise DataError(f"clip sampled at {clip.sample_rate} Hz, config expects "
                        f"{cfg.sample_rate} Hz")
    fixed = fix_length(clip, cfg.clip_seconds)
    spec = stft_magnitude(fixed, cfg.stft_window, cfg.stft_hop)
    spectrum = utterance_spectrum(fixed)
    return spec.values, spectrum.values


def waveform_features(samples: np.ndarray, cfg: ModelConfig):
    """Features for an already length-fixed waveform (training fast path)."""
    clip = AudioClip(samples, cfg.sample_rate)
    spec = stft_magnitude(clip, cfg.stft_window, cfg.stft_hop)
    return spec.values, utterance_spectrum(clip).values


def embed_batch(model: MultiScaleNet, waveforms: np.ndarray) -> np.ndarray:
    """Embeddings for a (B, L) waveform batch, inference mode."""
    specs = []
    spectra = []
    for row in waveforms:
        s, u = waveform_features(row, model.cfg)
        specs.append(s)
        spectra.append(u)
    with ad.no_grad():
        out = model(np.stack(specs), np.stack(spectra))
    return out.data


def load_model(path) -> tuple[MultiScaleNet, RunConfig]:
    """Rebuild a model from a checkpoint container and its config echo."""
    arrays, echo = load_container(path)
    if not echo.strip():
        raise ConfigError(f"{path}: checkpoint carries no config echo")
    run_cfg = parse_config_text(echo)
    model = MultiScaleNet(run_cfg.model)
    # checkpoints store the joint training state; keep the model subtree
    state = {}
    for key, value in arrays.items():
        for kind in ("param/", "buffer/"):
            prefix = kind + "model."
            if key.startswith(prefix):
                state[kind + key[len(prefix):]] = value
    model.load_state_dict(state)
    model.eval()
    return model, run_cfg
