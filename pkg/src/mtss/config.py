"""Flat experiment configuration with a key=value file format.

Every field has a working default; files hold `key = value` lines (# starts a
comment) and CLI flags override file values. Serialization round-trips
losslessly (floats via repr).
"""

from dataclasses import dataclass, fields

from .errors import ConfigError

MODES = ("single-pol", "single-subj", "mtl")
EMBEDDINGS = ("glove", "bert-file")


@dataclass
class ExperimentConfig:
    # experiment identity
    mode: str = "mtl"                 # single-pol | single-subj | mtl
    embedding: str = "glove"          # glove | bert-file
    seed: int = 1234
    out_dir: str = "runs/exp"
    float64: bool = False

    # corpus + vector files
    pol_pos_path: str = ""
    pol_neg_path: str = ""
    subj_path: str = ""
    obj_path: str = ""
    glove_path: str = ""              # empty: random trainable table
    mtss_pos_path: str = ""
    mtss_neg_path: str = ""
    mtss_subj_path: str = ""
    mtss_obj_path: str = ""
    prepared_dir: str = ""            # empty: <out_dir>/prepared

    # corpus handling
    pol_sample_per_class: int = 5000  # 0 keeps every sentence
    subset_per_task: int = 0          # 0 keeps all; else stratified cap
    train_fraction: float = 0.72
    dev_fraction: float = 0.08
    test_fraction: float = 0.20

    # model dimensions
    max_len_pol: int = 40
    max_len_subj: int = 85
    emb_dim: int = 300
    hidden_size: int = 128
    tdfc_size: int = 100
    fc_size: int = 64
    repr_size: int = 64
    ntn_size: int = 32
    num_classes: int = 2
    dropout: float = 0.3
    mask_attention: bool = True
    use_ntn: bool = True

    # training
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-08
    loss_weight_pol: float = 1.0
    loss_weight_subj: float = 1.0
    early_stop: bool = False
    early_stop_patience: int = 5
    grad_clip: float = 0.0            # 0 disables clipping
    save_optimizer: bool = False

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.embedding not in EMBEDDINGS:
            raise ConfigError(f"embedding must be one of {EMBEDDINGS}, got "
                              f"{self.embedding!r}")
        frac = self.train_fraction + self.dev_fraction + self.test_fraction
        if abs(frac - 1.0) > 1e-9:
            raise ConfigError(f"split fractions sum to {frac}, expected 1")
        for name in ("max_len_pol", "max_len_subj", "emb_dim", "hidden_size",
                     "tdfc_size", "fc_size", "repr_size", "ntn_size",
                     "num_classes", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.loss_weight_pol < 0 or self.loss_weight_subj < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        return self

    def tasks(self):
        if self.mode == "single-pol":
            return ("pol",)
        if self.mode == "single-subj":
            return ("subj",)
        return ("pol", "subj")

    def max_len(self, task):
        return self.max_len_pol if task == "pol" else self.max_len_subj

    def fractions(self):
        return (self.train_fraction, self.dev_fraction, self.test_fraction)

    def to_text(self):
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if f.type == "bool" or isinstance(val, bool):
                val = "true" if val else "false"
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{f.name} = {val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key = "
                                  f"value, got {raw!r}")
            key, _, val = line.partition("=")
            cfg.set_field(key.strip(), val.strip(), where=f"line {lineno}")
        return cfg

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def set_field(self, key, raw_value, where="override"):
        by_name = {f.name: f for f in fields(self)}
        if key not in by_name:
            raise ConfigError(f"unknown config key {key!r} ({where})")
        current = getattr(self, key)
        try:
            if isinstance(current, bool):
                low = raw_value.lower()
                if low not in ("true", "false", "1", "0"):
                    raise ValueError(raw_value)
                value = low in ("true", "1")
            elif isinstance(current, int):
                value = int(raw_value)
            elif isinstance(current, float):
                value = float(raw_value)
            else:
                value = raw_value
        except ValueError as exc:
            raise ConfigError(
                f"config key {key}: cannot parse {raw_value!r} ({where})"
            ) from exc
        setattr(self, key, value)
        return self
