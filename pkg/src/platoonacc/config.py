"""Scenario configuration: INI-style parsing, validation and object building.

A scenario file is plain sectioned key-value text (configparser dialect)
with one section per concern:

    [scenario]   name, topology (open|ring), n, ring_length, speed_limit
    [policy]     ramp-plateau gain curve: a, lam, gamma, g_max
    [controller] type (nonlinear|ctg), k, and g/r for ctg
    [leader]     open road only: profile and its parameters
    [initial]    s and v as comma lists of length n
    [sim]        dt, horizon, output_stride, halt_on_violation,
                 allow_unsafe_start
    [analysis]   optional: checks, q_grid, c, p, M, v_star

Vectors are comma-separated floats.  Serialization uses repr() for floats,
so parse -> dump -> parse is the identity.
"""

import configparser
import io
from dataclasses import dataclass, field

import numpy as np

from .controllers import ConstantTimeGapController, NonlinearGapController
from .simulation import (
    ConstantProfile,
    ExpApproachProfile,
    PiecewiseExpProfile,
    PlatoonState,
)
from .spacing import RampPlateauPolicy


class ConfigError(ValueError):
    """A scenario file is malformed or violates a structural invariant."""


_LEADER_FIELDS = {
    "constant": ("v",),
    "exp_approach": ("v_init", "v_target", "rate"),
    "piecewise_exp": ("v_init", "segments"),
}
_ANALYSIS_KEYS = ("checks", "q_grid", "c", "p", "M", "v_star")
_CHECK_NAMES = ("string", "contraction", "lyapunov")


def _floats(text):
    try:
        return tuple(float(tok) for tok in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(repr(float(x)) for x in value)
    return str(value)


@dataclass
class ScenarioConfig:
    """One batch run: platoon layout, controller, leader and outputs.

    Vectors are stored as tuples so configs compare by value; use
    initial_state()/build_*() for the numeric objects.
    """

    name: str = "scenario"
    topology: str = "open"
    n: int = 1
    controller: dict = field(default_factory=dict)
    policy: dict = field(default_factory=dict)
    leader: dict = field(default_factory=dict)
    s0: tuple = ()
    v0: tuple = ()
    ring_length: float = None
    speed_limit: float = None
    dt: float = 1e-3
    horizon: float = None
    output_stride: int = 1
    halt_on_violation: bool = False
    allow_unsafe_start: bool = False
    analysis: dict = field(default_factory=dict)

    # -- builders -----------------------------------------------------------

    def build_policy(self):
        if not self.policy:
            return None
        try:
            return RampPlateauPolicy(**self.policy)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad [policy] section: {exc}") from exc

    def build_controller(self, policy=None):
        kind = self.controller.get("type")
        k = self.controller.get("k")
        try:
            if kind == "nonlinear":
                policy = policy if policy is not None else self.build_policy()
                if policy is None:
                    raise ConfigError("nonlinear controller needs a [policy] section")
                allow = bool(self.controller.get("allow_invalid_policy", False))
                return NonlinearGapController(policy, k, allow_invalid_policy=allow)
            if kind == "ctg":
                return ConstantTimeGapController(
                    k=k, g=self.controller["g"], r=self.controller["r"]
                )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad [controller] section: {exc}") from exc
        raise ConfigError(f"unknown controller type {kind!r}")

    def build_leader(self):
        if self.topology == "ring":
            return None
        profile = self.leader.get("profile")
        try:
            if profile == "constant":
                return ConstantProfile(self.leader["v"])
            if profile == "exp_approach":
                return ExpApproachProfile(
                    self.leader["v_init"], self.leader["v_target"], self.leader["rate"]
                )
            if profile == "piecewise_exp":
                return PiecewiseExpProfile(self.leader["v_init"], self.leader["segments"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad [leader] section: {exc}") from exc
        raise ConfigError(f"unknown leader profile {profile!r}")

    def initial_state(self):
        return PlatoonState(np.array(self.s0, dtype=float), np.array(self.v0, dtype=float), 0.0)

    # -- validation ----------------------------------------------------------

    def validate(self):
        """Raise ConfigError on any structural problem; return self when clean."""
        if self.topology not in ("open", "ring"):
            raise ConfigError(f"topology must be open or ring, got {self.topology!r}")
        if self.n < 1 or int(self.n) != self.n:
            raise ConfigError(f"n must be a positive integer, got {self.n}")
        if len(self.s0) != self.n or len(self.v0) != self.n:
            raise ConfigError(
                f"initial vectors must have length n={self.n} "
                f"(got {len(self.s0)} gaps, {len(self.v0)} speeds)"
            )
        if self.dt <= 0.0:
            raise ConfigError("dt must be positive")
        if self.horizon is not None and self.horizon <= 0.0:
            raise ConfigError("horizon must be positive")
        if self.output_stride < 1 or int(self.output_stride) != self.output_stride:
            raise ConfigError("output_stride must be a positive integer")
        if self.speed_limit is not None and self.speed_limit <= 0.0:
            raise ConfigError("speed_limit must be positive")

        policy = self.build_policy()
        controller = self.build_controller(policy)

        if self.topology == "ring":
            if self.ring_length is None:
                raise ConfigError("ring topology needs ring_length")
            gap_sum = float(np.sum(self.s0))
            if abs(gap_sum - self.ring_length) > 1e-9:
                raise ConfigError(
                    f"ring gaps must sum to the ring length: sum={gap_sum!r}, "
                    f"L={self.ring_length!r}"
                )
            if policy is not None and self.ring_length <= self.n * policy.lam:
                raise ConfigError(
                    f"ring length {self.ring_length} must exceed n*lam = {self.n * policy.lam}"
                )
            if self.leader:
                raise ConfigError("ring topology takes no [leader] section")
        else:
            if not self.leader:
                raise ConfigError("open topology needs a [leader] section")
            self.build_leader()

        bad = set(self.analysis) - set(_ANALYSIS_KEYS)
        if bad:
            raise ConfigError(f"unknown [analysis] keys: {sorted(bad)}")
        for check in self.analysis.get("checks", ()):
            if check not in _CHECK_NAMES:
                raise ConfigError(f"unknown analysis check {check!r} (known: {_CHECK_NAMES})")

        if not self.allow_unsafe_start:
            self._check_safe_start(policy, controller)
        return self

    def _check_safe_start(self, policy, controller):
        from .safety import SafetyParams, in_safe_set

        if policy is None:
            raise ConfigError(
                "cannot verify a safe start without a [policy] section; "
                "set allow_unsafe_start = true to skip the check"
            )
        params = SafetyParams.from_policy(policy, self.controller["k"])
        if self.topology == "ring":
            lead0 = self.v0[-1]
        else:
            lead0 = float(self.build_leader().speed(0.0)[0])
        inside, slacks = in_safe_set(
            np.array(self.s0, dtype=float), np.array(self.v0, dtype=float), lead0, params
        )
        if not inside:
            worst = min(slacks, key=slacks.get)
            raise ConfigError(
                f"initial state is outside the safe set ({worst} slack "
                f"{slacks[worst]:.6g}); set allow_unsafe_start = true to run anyway"
            )

    # -- serialization -------------------------------------------------------

    def to_ini(self):
        out = io.StringIO()

        def section(header, pairs):
            rows = [(key, val) for key, val in pairs if val is not None]
            if not rows:
                return
            out.write(f"[{header}]\n")
            for key, val in rows:
                out.write(f"{key} = {_fmt(val)}\n")
            out.write("\n")

        section(
            "scenario",
            [
                ("name", self.name),
                ("topology", self.topology),
                ("n", self.n),
                ("ring_length", self.ring_length),
                ("speed_limit", self.speed_limit),
            ],
        )
        section("policy", [(key, self.policy.get(key)) for key in ("a", "lam", "gamma", "g_max")])
        ctrl = [("type", self.controller.get("type")), ("k", self.controller.get("k"))]
        if self.controller.get("type") == "ctg":
            ctrl += [("g", self.controller.get("g")), ("r", self.controller.get("r"))]
        if self.controller.get("allow_invalid_policy"):
            ctrl.append(("allow_invalid_policy", True))
        section("controller", ctrl)
        if self.leader:
            profile = self.leader.get("profile")
            rows = [("profile", profile)]
            for key in _LEADER_FIELDS.get(profile, ()):
                val = self.leader.get(key)
                if key == "segments" and val is not None:
                    val = "; ".join(
                        ":".join(repr(float(x)) for x in seg) for seg in val
                    )
                rows.append((key, val))
            section("leader", rows)
        section("initial", [("s", self.s0), ("v", self.v0)])
        section(
            "sim",
            [
                ("dt", self.dt),
                ("horizon", self.horizon),
                ("output_stride", self.output_stride),
                ("halt_on_violation", self.halt_on_violation),
                ("allow_unsafe_start", self.allow_unsafe_start),
            ],
        )
        if self.analysis:
            rows = []
            for key in _ANALYSIS_KEYS:
                if key not in self.analysis:
                    continue
                val = self.analysis[key]
                if key == "checks":
                    val = ", ".join(val)
                rows.append((key, val))
            section("analysis", rows)
        return out.getvalue()

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_ini())


def _known_keys(parser, section, allowed):
    extra = set(parser[section]) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")


def parse_config(text):
    """Parse INI text into a ScenarioConfig (no validation beyond syntax/types)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case (M vs m, g_max)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from exc

    known_sections = {"scenario", "policy", "controller", "leader", "initial", "sim", "analysis"}
    extra = set(parser.sections()) - known_sections
    if extra:
        raise ConfigError(f"unknown sections: {sorted(extra)}")
    for required in ("scenario", "controller", "initial"):
        if required not in parser:
            raise ConfigError(f"missing [{required}] section")

    cfg = ScenarioConfig()
    sc = parser["scenario"]
    _known_keys(parser, "scenario", ("name", "topology", "n", "ring_length", "speed_limit"))
    cfg.name = sc.get("name", cfg.name)
    cfg.topology = sc.get("topology", cfg.topology)
    try:
        cfg.n = sc.getint("n")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad n in [scenario]: {exc}") from exc
    if "ring_length" in sc:
        cfg.ring_length = sc.getfloat("ring_length")
    if "speed_limit" in sc:
        cfg.speed_limit = sc.getfloat("speed_limit")

    if "policy" in parser:
        _known_keys(parser, "policy", ("a", "lam", "gamma", "g_max"))
        try:
            cfg.policy = {key: parser["policy"].getfloat(key) for key in parser["policy"]}
        except ValueError as exc:
            raise ConfigError(f"bad [policy] value: {exc}") from exc

    ctrl = parser["controller"]
    _known_keys(parser, "controller", ("type", "k", "g", "r", "allow_invalid_policy"))
    cfg.controller = {"type": ctrl.get("type")}
    try:
        for key in ("k", "g", "r"):
            if key in ctrl:
                cfg.controller[key] = ctrl.getfloat(key)
        if "allow_invalid_policy" in ctrl:
            cfg.controller["allow_invalid_policy"] = ctrl.getboolean("allow_invalid_policy")
    except ValueError as exc:
        raise ConfigError(f"bad [controller] value: {exc}") from exc

    if "leader" in parser:
        lead = parser["leader"]
        profile = lead.get("profile")
        if profile not in _LEADER_FIELDS:
            raise ConfigError(f"unknown leader profile {profile!r}")
        _known_keys(parser, "leader", ("profile",) + _LEADER_FIELDS[profile])
        cfg.leader = {"profile": profile}
        try:
            for key in _LEADER_FIELDS[profile]:
                if key == "segments":
                    cfg.leader[key] = tuple(
                        tuple(float(x) for x in seg.split(":"))
                        for seg in lead.get(key).split(";")
                    )
                else:
                    cfg.leader[key] = lead.getfloat(key)
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"bad [leader] value: {exc}") from exc

    init = parser["initial"]
    _known_keys(parser, "initial", ("s", "v"))
    if "s" not in init or "v" not in init:
        raise ConfigError("[initial] needs both s and v")
    cfg.s0 = _floats(init.get("s"))
    cfg.v0 = _floats(init.get("v"))

    if "sim" in parser:
        sim = parser["sim"]
        _known_keys(
            parser,
            "sim",
            ("dt", "horizon", "output_stride", "halt_on_violation", "allow_unsafe_start"),
        )
        try:
            if "dt" in sim:
                cfg.dt = sim.getfloat("dt")
            if "horizon" in sim:
                cfg.horizon = sim.getfloat("horizon")
            if "output_stride" in sim:
                cfg.output_stride = sim.getint("output_stride")
            if "halt_on_violation" in sim:
                cfg.halt_on_violation = sim.getboolean("halt_on_violation")
            if "allow_unsafe_start" in sim:
                cfg.allow_unsafe_start = sim.getboolean("allow_unsafe_start")
        except ValueError as exc:
            raise ConfigError(f"bad [sim] value: {exc}") from exc

    if "analysis" in parser:
        ana = parser["analysis"]
        _known_keys(parser, "analysis", _ANALYSIS_KEYS)
        try:
            if "checks" in ana:
                cfg.analysis["checks"] = tuple(
                    tok.strip() for tok in ana.get("checks").split(",") if tok.strip()
                )
            if "q_grid" in ana:
                cfg.analysis["q_grid"] = _floats(ana.get("q_grid"))
            for key in ("c", "p", "M", "v_star"):
                if key in ana:
                    cfg.analysis[key] = ana.getfloat(key)
        except ValueError as exc:
            raise ConfigError(f"bad [analysis] value: {exc}") from exc

    return cfg


def load_config(path):
    """Read, parse and validate a scenario file."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text).validate()
