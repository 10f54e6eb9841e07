import os
import re
import numpy as np
import xarray as xr
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from toggle.exceptions import (HorizonError, NonFiniteValueError, SchemaMismatchError,
                               TraceFormatError, UnknownChannelError)
from toggle.utils import atomic_write_text, format_real

TRACE_MAGIC = '#toggle-trace v1'
CHANNEL_NAME = re.compile(r'^[A-Za-z_][A-Za-z0-9_]*$')
_IDENTIFIER = re.compile(r'^[^\s,]+$')
_HEADER = re.compile(r'^#toggle-trace v1 T=(\d+)(?: dataset=(\S+))?$')


def attention_channel(layer: int) -> str:
    """Name of the attention-similarity channel of a 1-based layer index."""
    return f"attn_sim_{layer}"


def builtin_channels(n_layers: int) -> Tuple[str, ...]:
    """
    Channels required by the four built-in linguistic properties.

    Args:
        n_layers (int): Number of transformer layers.

    Returns:
        Tuple[str, ...]: `jsd`, `attn_sim_1` ... `attn_sim_<n>`, `emb_sim`, `fact_ratio`.
    """
    return ('jsd',) + tuple(attention_channel(l) for l in range(1, n_layers + 1)) + ('emb_sim', 'fact_ratio')


@dataclass(frozen=True)
class TimeWindow:
    """
    Inclusive window of 1-based steps {start, ..., start + lookahead}.

    Attributes:
        start (int): First step of the window, at least 1.
        lookahead (int): Number of steps after `start` covered by the window.
        max_context (Optional[int]): Maximum context length T; when given, the window must end at or before it.
    """
    start: int
    lookahead: int
    max_context: Optional[int] = None

    def __post_init__(self):
        if self.start < 1:
            raise ValueError(f"Window start must be >= 1, got {self.start}.")
        if self.lookahead < 0:
            raise ValueError(f"Window lookahead must be >= 0, got {self.lookahead}.")
        if self.max_context is not None and self.start + self.lookahead > self.max_context:
            raise HorizonError(f"Window [{self.start}, {self.end}] exceeds the maximum context T={self.max_context}.")

    @property
    def end(self) -> int:
        return self.start + self.lookahead

    def steps(self) -> range:
        return range(self.start, self.end + 1)


def window_contains(w: TimeWindow, t: int) -> bool:
    """
    Check whether step `t` lies inside the window.

    Args:
        w (TimeWindow): The window.
        t (int): A 1-based step index.

    Returns:
        bool: True iff start <= t <= start + lookahead.
    """
    if t < 1:
        raise ValueError(f"Step indices are 1-based, got {t}.")
    return w.start <= t <= w.start + w.lookahead


@dataclass(frozen=True, eq=False)
class InferenceSignal:
    """
    Per-step property metrics of one prompt.

    Attributes:
        prompt_id (str): Identifier of the prompt.
        channels (Tuple[str, ...]): Ordered, unique channel names.
        values (np.ndarray): Read-only matrix of shape (horizon, len(channels)); row t-1 holds step t.
    """
    prompt_id: str
    channels: Tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not _IDENTIFIER.match(str(self.prompt_id)):
            raise ValueError(f"Prompt id '{self.prompt_id}' must be non-empty without whitespace or commas.")
        channels = tuple(self.channels)
        _check_channel_names(channels)
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(channels):
            raise ValueError(f"Signal '{self.prompt_id}' needs a (steps, {len(channels)}) value matrix, "
                             f"got shape {values.shape}.")
        if values.shape[0] < 1:
            raise HorizonError(f"Signal '{self.prompt_id}' has no steps; the horizon must be >= 1.")
        if not np.all(np.isfinite(values)):
            step, col = np.argwhere(~np.isfinite(values))[0]
            raise NonFiniteValueError(f"Signal '{self.prompt_id}' has a non-finite value in channel "
                                      f"'{channels[col]}' at step {step + 1}.")
        values.flags.writeable = False
        object.__setattr__(self, 'channels', channels)
        object.__setattr__(self, 'values', values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, InferenceSignal):
            return NotImplemented
        return (self.prompt_id == other.prompt_id and self.channels == other.channels
                and np.array_equal(self.values, other.values))

    __hash__ = None

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    def channel_index(self, name: str) -> int:
        try:
            return self.channels.index(name)
        except ValueError:
            raise UnknownChannelError(f"Signal '{self.prompt_id}' has no channel '{name}'.") from None

    def channel(self, name: str) -> np.ndarray:
        """Values of one channel over steps 1..horizon."""
        return self.values[:, self.channel_index(name)]

    def value(self, name: str, t: int) -> float:
        """Value of a channel at the 1-based step `t`."""
        if not 1 <= t <= self.horizon:
            raise HorizonError(f"Step {t} is outside the horizon [1, {self.horizon}] of signal '{self.prompt_id}'.")
        return float(self.values[t - 1, self.channel_index(name)])

    def to_dataarray(self) -> xr.DataArray:
        return xr.DataArray(self.values, dims=('step', 'channel'),
                            coords={'step': np.arange(1, self.horizon + 1), 'channel': list(self.channels)},
                            name=self.prompt_id)


@dataclass(frozen=True)
class SignalBundle:
    """
    Signals of all prompts of an evaluation dataset.

    Attributes:
        dataset_id (str): Identifier of the evaluation dataset.
        max_context (int): Maximum context length T bounding every horizon.
        channels (Tuple[str, ...]): Channel schema shared by all signals.
        signals (Tuple[InferenceSignal, ...]): One signal per prompt, unique prompt ids.
    """
    dataset_id: str
    max_context: int
    channels: Tuple[str, ...]
    signals: Tuple[InferenceSignal, ...] = ()

    def __post_init__(self):
        if not _IDENTIFIER.match(str(self.dataset_id)):
            raise ValueError(f"Dataset id '{self.dataset_id}' must be non-empty without whitespace or commas.")
        if self.max_context < 1:
            raise ValueError(f"Maximum context must be >= 1, got {self.max_context}.")
        channels = tuple(self.channels)
        _check_channel_names(channels)
        signals = tuple(self.signals)
        seen = set()
        for sig in signals:
            if set(sig.channels) != set(channels):
                raise SchemaMismatchError(missing=set(channels) - set(sig.channels),
                                          extra=set(sig.channels) - set(channels))
            if sig.channels != channels:
                raise ValueError(f"Signal '{sig.prompt_id}' orders its channels differently from the bundle.")
            if sig.prompt_id in seen:
                raise ValueError(f"Duplicate prompt id '{sig.prompt_id}'.")
            seen.add(sig.prompt_id)
            if sig.horizon > self.max_context:
                raise HorizonError(f"Signal '{sig.prompt_id}' has horizon {sig.horizon} > T={self.max_context}.")
        object.__setattr__(self, 'channels', channels)
        object.__setattr__(self, 'signals', signals)

    def __len__(self) -> int:
        return len(self.signals)

    def __iter__(self) -> Iterator[InferenceSignal]:
        return iter(self.signals)

    @property
    def prompt_ids(self) -> List[str]:
        return [s.prompt_id for s in self.signals]

    def signal(self, prompt_id: str) -> InferenceSignal:
        for sig in self.signals:
            if sig.prompt_id == prompt_id:
                return sig
        raise KeyError(f"No signal for prompt '{prompt_id}'.")

    def require_channels(self, names: Iterable[str]) -> None:
        """
        Check that the bundle carries every named channel.

        Args:
            names (Iterable[str]): Required channel names.

        Raises:
            SchemaMismatchError: If at least one channel is missing.
        """
        missing = set(names) - set(self.channels)
        if missing:
            raise SchemaMismatchError(missing=missing)

    def channel_matrix(self, name: str) -> np.ndarray:
        """
        Values of one channel for all prompts as a (prompts, max horizon) matrix, NaN past each horizon.
        """
        if name not in self.channels:
            raise UnknownChannelError(f"Bundle '{self.dataset_id}' has no channel '{name}'.")
        col = self.channels.index(name)
        width = max((s.horizon for s in self.signals), default=0)
        out = np.full((len(self.signals), width), np.nan)
        for i, sig in enumerate(self.signals):
            out[i, :sig.horizon] = sig.values[:, col]
        return out

    def to_dataset(self) -> xr.Dataset:
        """
        Convert the bundle into a dataset with dimensions (prompt_id, step), one variable per channel.

        Steps beyond a prompt's horizon are NaN so reductions must skip missing values.
        """
        width = max((s.horizon for s in self.signals), default=0)
        coords = {'prompt_id': self.prompt_ids, 'step': np.arange(1, width + 1)}
        data_vars = {name: (('prompt_id', 'step'), self.channel_matrix(name)) for name in self.channels}
        ds = xr.Dataset(data_vars, coords=coords)
        ds.attrs['dataset_id'] = self.dataset_id
        ds.attrs['max_context'] = self.max_context
        ds['horizon'] = ('prompt_id', np.array([s.horizon for s in self.signals], dtype=np.int64))
        return ds


def _check_channel_names(channels: Sequence[str]) -> None:
    if len(set(channels)) != len(channels):
        dupes = sorted({c for c in channels if list(channels).count(c) > 1})
        raise ValueError(f"Channel names must be unique, duplicated: {', '.join(dupes)}.")
    for name in channels:
        if not CHANNEL_NAME.match(name):
            raise ValueError(f"Invalid channel name '{name}'.")


def write_trace(bundle: SignalBundle, path: str) -> None:
    """
    Write a bundle in the line-oriented trace format.

    The output is a pure function of the bundle, so repeated writes produce identical files.

    Args:
        bundle (SignalBundle): The bundle to write.
        path (str): Destination file path. Written atomically.
    """
    lines = [f"{TRACE_MAGIC} T={bundle.max_context} dataset={bundle.dataset_id}",
             ','.join(('prompt_id', 'step') + bundle.channels)]
    for sig in bundle.signals:
        for t, row in enumerate(sig.values, start=1):
            lines.append(','.join([sig.prompt_id, str(t)] + [format_real(v) for v in row]))
    atomic_write_text(path, '\n'.join(lines) + '\n')


def read_trace(path: str, required_channels: Optional[Iterable[str]] = None,
               exact: bool = False) -> SignalBundle:
    """
    Read and validate a trace file.

    Args:
        path (str): Path of the trace file.
        required_channels (Optional[Iterable[str]]): Channels that must be present, e.g. those referenced
            by a property specification.
        exact (bool): If True, channels beyond `required_channels` are rejected as well.

    Returns:
        SignalBundle: The parsed bundle.

    Raises:
        TraceFormatError: On malformed content, with the offending line number.
        NonFiniteValueError: If a value is NaN or infinite.
        SchemaMismatchError: If required channels are missing (or extra ones present with `exact`).
    """
    with open(path, 'r', encoding='utf-8') as f:
        lines = f.read().split('\n')
    while lines and lines[-1] == '':
        lines.pop()
    if not lines:
        raise TraceFormatError("empty file, expected a trace header", lineno=1)

    header = _HEADER.match(lines[0])
    if header is None:
        raise TraceFormatError(f"expected '{TRACE_MAGIC} T=<int>', got '{lines[0]}'", lineno=1)
    max_context = int(header.group(1))
    dataset_id = header.group(2) or os.path.splitext(os.path.basename(path))[0]
    if max_context < 1:
        raise TraceFormatError(f"T must be >= 1, got {max_context}", lineno=1)

    if len(lines) < 2:
        raise TraceFormatError("missing column line", lineno=2)
    columns = lines[1].split(',')
    if columns[:2] != ['prompt_id', 'step']:
        raise TraceFormatError("column line must start with 'prompt_id,step'", lineno=2)
    channels = tuple(columns[2:])
    try:
        _check_channel_names(channels)
    except ValueError as e:
        raise TraceFormatError(str(e), lineno=2) from None

    if required_channels is not None:
        required = set(required_channels)
        missing = required - set(channels)
        extra = set(channels) - required if exact else set()
        if missing or extra:
            raise SchemaMismatchError(missing=missing, extra=extra)

    rows: Dict[str, List[List[float]]] = {}
    order: List[str] = []
    for lineno, line in enumerate(lines[2:], start=3):
        tokens = line.split(',')
        if len(tokens) != len(channels) + 2:
            raise TraceFormatError(f"expected {len(channels) + 2} fields, got {len(tokens)}", lineno=lineno)
        prompt_id, step_token = tokens[0], tokens[1]
        if not _IDENTIFIER.match(prompt_id):
            raise TraceFormatError(f"invalid prompt id '{prompt_id}'", lineno=lineno)
        try:
            step = int(step_token)
        except ValueError:
            raise TraceFormatError(f"step '{step_token}' is not an integer", lineno=lineno) from None
        if prompt_id not in rows:
            rows[prompt_id] = []
            order.append(prompt_id)
        elif order[-1] != prompt_id:
            raise TraceFormatError(f"steps of prompt '{prompt_id}' are not contiguous", lineno=lineno)
        expected = len(rows[prompt_id]) + 1
        if step != expected:
            raise TraceFormatError(f"prompt '{prompt_id}' expected step {expected}, got {step}", lineno=lineno)
        if step > max_context:
            raise TraceFormatError(f"step {step} exceeds T={max_context}", lineno=lineno)
        try:
            values = [float(tok) for tok in tokens[2:]]
        except ValueError as e:
            raise TraceFormatError(f"invalid number ({e})", lineno=lineno) from None
        for name, v in zip(channels, values):
            if not np.isfinite(v):
                raise NonFiniteValueError(f"line {lineno}: non-finite value in channel '{name}'")
        rows[prompt_id].append(values)

    signals = tuple(InferenceSignal(pid, channels, np.array(rows[pid], dtype=np.float64))
                    for pid in order)
    return SignalBundle(dataset_id=dataset_id, max_context=max_context, channels=channels, signals=signals)
