"""
Unit tests for the built-in environments.

Tests:
- Cloud model structure
- Spelunking levels, trap rows, gear and the strategy classifier
- Palindrome grid, monitor rewards and the always-declare baseline
- Environment registry and EnvSpec documents
"""

import pytest

from rmdp.models.configuration import Configuration
from rmdp.models.rmdp import call_port, node
from rmdp.services.envs import (
    AVOID_TRAPS,
    OVER_TRAPS,
    UNDETERMINED,
    Layout,
    always_declare_policy,
    build_env,
    cell_of,
    cloud_rmdp,
    default_layouts,
    env_specs,
    palindrome_env,
    palindrome_grid,
    spelunking_rmdp,
    strategy_class,
)
from rmdp.services.oracle import solve_1exit
from rmdp.services.truncated import solve_truncated
from rmdp.services.validators import is_single_exit, validate


class TestCloud:
    """Components T, S and H."""

    def test_structure(self):
        """H is the only component with two exits."""
        m = cloud_rmdp()
        assert m.names == ("T", "S", "H")
        assert m.component("H").exits == ("u6", "u7")
        assert m.callee("b4").name == "H"
        assert validate(m) == []

    def test_fast_server_restarts(self):
        """f crashes into a fresh S with probability 0.4."""
        row = cloud_rmdp().component("S").row(node("u3"), "f")
        assert row == ((call_port("b5", "u3"), 0.4), (node("u4"), 0.6))


def over_traps_policy(c: Configuration) -> str:
    return "s"


def avoid_traps_policy(c: Configuration) -> str:
    r, col, _ = cell_of(c.vertex) or (0, 0, 0)
    if r == 0 and col < 5:
        return "e"
    if col == 5 and r < 5:
        return "s"
    return "w"


class TestSpelunking:
    """Alternating cave levels."""

    @pytest.fixture(scope="class")
    def cave(self):
        return spelunking_rmdp()

    def test_levels(self, cave):
        """The top level plus one level per hole of each type."""
        assert cave.names == ("L1_I", "L2_r4c0", "L2_r4c5", "L1_r4c0", "L1_r4c5")
        assert is_single_exit(cave)
        assert validate(cave) == []

    def test_trap_row(self, cave):
        """Stepping on a trap drops into a uniformly chosen hole with trap_p."""
        top = cave.component("L1_I")
        row = top.row(node("L1_I_r0c0g0"), "s")
        assert row == (
            (call_port("L1_I_b_r4c0", "L2_r4c0_in"), 0.25),
            (call_port("L1_I_b_r4c5", "L2_r4c5_in"), 0.25),
            (node("L1_I_r1c0g0"), 0.5),
        )
        assert top.reward(node("L1_I_r0c0g0"), "s") == -1.0

    def test_gear_and_ascent(self, cave):
        """Gear is picked up at E; ascending is only possible where the level began."""
        top = cave.component("L1_I")
        assert top.row(node("L1_I_r4c0g0"), "s") == ((node("L1_I_r5c0g1"), 1.0),)
        assert "ascend" in top.enabled_actions(node("L1_I_r0c0g1"))
        assert "ascend" not in top.enabled_actions(node("L1_I_r0c1g1"))
        assert top.row(node("L1_I_r0c1g1"), "w") == (
            (node("L1_I_out"), 0.01),
            (node("L1_I_r0c0g1"), 0.99),
        )

    def test_descend_at_hole(self, cave):
        """Holes offer a deliberate descent into the other level type."""
        top = cave.component("L1_I")
        assert top.row(node("L1_I_r4c5g0"), "descend") == ((call_port("L1_I_b_r4c5", "L2_r4c5_in"), 1.0),)

    def test_sub_level_starts_at_hole(self, cave):
        """A level entered through a hole begins at that cell."""
        level = cave.component("L2_r4c0")
        assert level.row(node("L2_r4c0_in"), "n") == ((node("L2_r4c0_r3c0g0"), 1.0),)

    def test_over_traps_is_optimal(self, cave):
        """Crossing the traps beats the 21-step detour."""
        value = solve_1exit(cave).entry_value("L1_I_in")
        assert -21.0 < value < -11.0

    def test_strategy_classes(self, cave):
        """The classifier follows the no-trap branch to the gear."""
        assert strategy_class(cave, over_traps_policy) == OVER_TRAPS
        assert strategy_class(cave, avoid_traps_policy) == AVOID_TRAPS
        assert strategy_class(cave, lambda c: "n") == UNDETERMINED

    def test_parameter_ranges(self):
        """Probabilities must lie in [0, 1]."""
        with pytest.raises(ValueError):
            spelunking_rmdp(trap_p=1.5)

    def test_layout_dimensions_must_match(self):
        """Both level types share one grid size."""
        first, _ = default_layouts()
        with pytest.raises(ValueError):
            spelunking_rmdp(layouts=(first, Layout(("O.", "..")),))

    def test_layout_file_validation(self, tmp_path):
        """Unknown characters in a layout file are refused."""
        path = tmp_path / "bad.txt"
        path.write_text("I.X\n...\n", encoding="utf-8")
        with pytest.raises(ValueError):
            Layout.load(path)


class TestPalindrome:
    """Grid world with an even-palindrome monitor."""

    def test_grid(self):
        """Nine cells, a uniform dispatch and walls that keep the agent in place."""
        grid = palindrome_grid().component("grid")
        assert len(grid.row(node("start"), "init")) == 9
        assert grid.row(node("c00"), "n") == ((node("c00"), 1.0),)
        assert grid.row(node("c00"), "e") == ((node("c01"), 1.0),)
        assert not grid.exits

    def test_declaration_rewards(self):
        """Declaring in R at the centre earns 50, elsewhere -5."""
        root = palindrome_env().component("root")
        assert root.row(node("root_n_c11_R"), "special") == ((node("root_o_acc"), 1.0),)
        assert root.reward(node("root_o_acc"), "go") == 50.0
        assert root.row(node("root_n_c00_R"), "special") == ((node("root_o_rej"), 1.0),)
        assert root.reward(node("root_o_rej"), "go") == -5.0

    def test_always_declare_baseline(self):
        """Guess the midpoint at once, then declare: worth (49 - 8 * 6) / 9."""
        env = palindrome_env()
        policy = always_declare_policy(env)
        strategy = {}
        for comp in env.components:
            for v in env.vertices(comp.name):
                if "special" in comp.enabled_actions(v):
                    strategy[v] = "special"
        assert policy(Configuration((), node("root_n_c00_P"), "root")) == "special"
        values = solve_truncated(env, 2, 1e-12, strategy=strategy)
        assert values.value("root", node("root_start")) == pytest.approx(1.0 / 9.0, abs=1e-9)


class TestRegistry:
    """Named environments."""

    @pytest.mark.parametrize("name", ["cloud", "spelunking", "palindrome"])
    def test_build_env(self, name):
        """Each name builds a valid model whose start entry exists."""
        m, spec = build_env(name)
        component, entry = spec.start
        assert entry in m.component(component).entries
        assert spec.hyperparameters.start == spec.start

    def test_unknown_env(self):
        """Unknown names list the known ones."""
        with pytest.raises(ValueError, match="cloud"):
            build_env("nope")

    def test_spec_json(self):
        """EnvSpec documents carry a schema version and plain values."""
        document = env_specs()["palindrome"].to_json()
        assert document["schema_version"] == 1
        assert document["start"] == {"component": "root", "entry": "root_start"}
        assert document["hyperparameters"]["epsilon_decay_steps"] == 30000
        assert document["hyperparameters"]["start"] == ["root", "root_start"]
