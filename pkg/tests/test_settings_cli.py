import csv
import io
import logging

import pytest

from evodtn import gp
from evodtn.cli import main
from evodtn.metrics import ComparisonResult, SimReport, compute_report
from evodtn.routing import run_simulation
from evodtn.settings import (Settings, SettingsError, build_scenario, bundled_scenario, bundled_scenarios,
                             format_settings, load_settings, parse_settings, parse_value)

SAMPLE_SETTINGS = """\
Scenario.name = default_scenario
Scenario.endTime = 43200
Scenario.nrofHostGroups = 6
btInterface.transmitSpeed = 250k
btInterface.transmitRange = 10
Group.bufferSize = 5M
Group.waitTime = 0, 120
Group.nrofHosts = 40
Group.interface1 = btInterface
Group.msgTtl = 300
Group4.bufferSize = 50M
Events1.interval = 25,35
Events1.size = 500k,1M
Events1.hosts = 0,126
MovementModel.rngSeed = 1
"""


# ------------------------------------------------------------------ parsing

def test_sample_values():
    s = parse_settings(SAMPLE_SETTINGS)
    assert s["Group.nrofHosts"] == 40
    assert s["Events1.size"] == (500_000, 1_000_000)
    assert s["Events1.interval"] == (25, 35)
    assert s["btInterface.transmitSpeed"] == 250_000
    assert s["Scenario.name"] == "default_scenario"


def test_group_override_layering():
    s = parse_settings(SAMPLE_SETTINGS)
    assert s.group(4, "bufferSize") == 50_000_000
    assert s.group(1, "bufferSize") == 5_000_000
    assert s.group(2, "missing", "d") == "d"


def test_later_keys_win():
    assert parse_settings("a.b = 1\na.b = 2\n")["a.b"] == 2


@pytest.mark.parametrize("text,value", [("40", 40), ("0.1", 0.1), ("1.5M", 1_500_000), ("2G", 2_000_000_000),
                                        ("true", True), ("False", False), ("data/roads.wkt", "data/roads.wkt"),
                                        ("7, 10", (7, 10)), ("1e3", 1000.0)])
def test_value_types(text, value):
    assert parse_value(text) == value


def test_comments_and_blank_lines():
    s = parse_settings("# header\n\nScenario.endTime = 10 # trailing\n")
    assert s.values == {"Scenario.endTime": 10}


@pytest.mark.parametrize("text,line", [("Scenario.endTime = 1\nno equals here\n", 2),
                                       ("a = 1\nb = 2\n = 3\n", 3), ("x.y =\n", 1)])
def test_malformed_lines_report_line_number(text, line):
    with pytest.raises(SettingsError) as exc:
        parse_settings(text)
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_unknown_keys_warn(caplog):
    with caplog.at_level(logging.WARNING, logger="evodtn"):
        s = parse_settings("Scenario.endTime = 1\nScenario.bogus = 2\nbtInterface.transmitRange = 10\n"
                           "Group.interface1 = btInterface\n")
    assert "Scenario.bogus" in caplog.text
    assert s.unknown_keys() == ["Scenario.bogus"]


def test_roundtrip():
    s = load_settings(bundled_scenario("desk_grid"))
    again = parse_settings(format_settings(s))
    assert again.values == s.values


def test_updated_maps_double_underscore():
    s = parse_settings(SAMPLE_SETTINGS).updated(Group4__bufferSize=1)
    assert s.group(4, "bufferSize") == 1


# --------------------------------------------------------------- scenarios

def test_desk_scenario_shape(desk_spec):
    assert desk_spec.n_hosts == 36
    assert [g.n_hosts for g in desk_spec.groups] == [10, 10, 10, 2, 2, 2]
    assert desk_spec.groups[0].msg_ttl == 50 * 60
    assert desk_spec.groups[3].buffer_size == 50_000_000
    assert desk_spec.groups[3].interfaces == ("btInterface", "highspeedInterface")
    assert desk_spec.end_time == 7200 and desk_spec.warmup == 1000
    assert desk_spec.events.hosts == (0, 36)


@pytest.mark.parametrize("g,total", [(40, 126), (100, 306)])
def test_host_totals_follow_group_size(desk_settings, g, total):
    s = desk_settings.updated(Group__nrofHosts=g, Events1__hosts=(0, total))
    spec = build_scenario(s)
    assert spec.n_hosts == total
    assert [grp.n_hosts for grp in spec.groups[3:]] == [2, 2, 2]


def test_event_range_must_fit_hosts(desk_settings):
    with pytest.raises(SettingsError):
        build_scenario(desk_settings.updated(Events1__hosts=(0, 37)))


def test_missing_required_key(desk_settings):
    vals = dict(desk_settings.values)
    del vals["Scenario.endTime"]
    with pytest.raises(SettingsError):
        build_scenario(Settings(vals, desk_settings.base_dir))


def test_seed_override(desk_settings):
    assert build_scenario(desk_settings).seed == 1
    assert build_scenario(desk_settings, 9).seed == 9


@pytest.mark.parametrize("name", ["city_126", "city_306", "desk_grid"])
def test_bundled_scenarios_build_and_generate(name):
    assert name in bundled_scenarios()
    s = load_settings(bundled_scenario(name))
    spec = build_scenario(s.updated(Scenario__endTime=100))
    expected = {"city_126": 126, "city_306": 306, "desk_grid": 36}[name]
    assert spec.n_hosts == expected
    report = compute_report(run_simulation(spec, "epidemic"))
    assert report.n_created >= 1


def test_unknown_bundled_name():
    with pytest.raises(FileNotFoundError):
        bundled_scenario("nope")


# ---------------------------------------------------------------------- CLI

@pytest.fixture
def short_settings(tmp_path, desk_settings):
    """Desk scenario cut to 20 minutes, written to a file outside the package."""
    vals = dict(desk_settings.updated(Scenario__endTime=1200, Group__msgTtl=10).values)
    for k, v in vals.items():
        if k.endswith(".routeFile"):
            vals[k] = str(desk_settings.base_dir / v)
    path = tmp_path / "short.txt"
    path.write_text(format_settings(Settings(vals)))
    return path


def test_missing_settings_exit_code(tmp_path, capsys):
    assert main(["simulate", "--settings", str(tmp_path / "none.txt")]) == 2
    assert "not found" in capsys.readouterr().err


def test_bad_tree_file(tmp_path, short_settings, capsys):
    (tmp_path / "t.txt").write_text("sequence(update")
    assert main(["simulate", "--settings", str(short_settings), "--tree", str(tmp_path / "t.txt"),
                 "--out-dir", str(tmp_path)]) != 0
    assert "error" in capsys.readouterr().err


def test_simulate_is_deterministic(tmp_path, short_settings):
    for d in ("a", "b"):
        assert main(["simulate", "--settings", str(short_settings), "--seed", "3",
                     "--out-dir", str(tmp_path / d)]) == 0
    for f in ("report.txt", "events.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_simulate_tree_equals_native(tmp_path, short_settings):
    tree = tmp_path / "prophet.txt"
    tree.write_text(gp.dump_tree(gp.PROPHET_TREE))
    main(["simulate", "--settings", str(short_settings), "--router", "prophet", "--out-dir", str(tmp_path / "n")])
    main(["simulate", "--settings", str(short_settings), "--router", f"tree:{tree}", "--out-dir",
          str(tmp_path / "t")])
    assert (tmp_path / "n" / "events.csv").read_text() == (tmp_path / "t" / "events.csv").read_text()
    assert (tmp_path / "n" / "report.txt").read_text() == (tmp_path / "t" / "report.txt").read_text()


def test_simulate_several_runs(tmp_path, short_settings):
    assert main(["simulate", "--settings", str(short_settings), "--runs", "2", "--no-events",
                 "--out-dir", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.iterdir() if p.name.startswith("report")) == \
        ["report_seed1.txt", "report_seed2.txt"]
    assert not list(tmp_path.glob("events*"))


def test_bundled_name_accepted(tmp_path):
    # shortened through a tree that returns at once, so the run is quick
    tree = tmp_path / "r.txt"
    tree.write_text("return\n")
    assert main(["simulate", "--settings", "desk_grid", "--tree", str(tree), "--no-events",
                 "--out-dir", str(tmp_path)]) == 0
    rep = SimReport.from_text((tmp_path / "report.txt").read_text())
    assert rep.n_created > 0 and rep.n_started == 0


def test_compare_command(tmp_path, capsys):
    paths = []
    for i, p in enumerate([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]):
        f = tmp_path / f"r{i}.txt"
        f.write_text(SimReport(n_created=10, delivery_probability=p).to_text())
        paths.append(str(f))
    out = tmp_path / "cmp.csv"
    assert main(["compare", "--a", *paths[:3], "--b", *paths[3:], "--label-a", "x", "--label-b", "y",
                 "--out", str(out)]) == 0
    row = ComparisonResult.parse_row(out.read_text())
    assert abs(row["p_value"] - 0.1) < 1e-12
    assert row["median_a"] == 0.2 and row["median_b"] == 0.5
    assert out.read_text() in capsys.readouterr().out
    assert main(["compare", "--a", *paths[:3], "--b", *paths[:3], "--out", str(out)]) == 0
    assert ComparisonResult.parse_row(out.read_text())["p_value"] == 1.0


def test_compare_needs_two_per_side(tmp_path):
    f = tmp_path / "r.txt"
    f.write_text(SimReport().to_text())
    assert main(["compare", "--a", str(f), "--b", str(f), str(f)]) == 1


def test_evolve_and_crosstest(tmp_path, short_settings):
    out = tmp_path / "evo"
    args = ["evolve", "--settings", str(short_settings), "--pop", "6", "--gens", "3", "--run-seed", "2",
            "--out-dir", str(out)]
    assert main(args) == 0
    rows = list(csv.DictReader(io.StringIO((out / "generations.csv").read_text())))
    assert 1 <= len(rows) <= 3
    tree = gp.parse_tree((out / "best_tree.txt").read_text())
    assert gp.check_validity(tree, "epidemic") and not tree.contains("tryOtherMessages")
    assert SimReport.from_text((out / "report.txt").read_text()).fitness == max(
        float(r["best_fitness"]) for r in rows)
    first = (out / "generations.csv").read_bytes()
    assert main(args) == 0
    assert (out / "generations.csv").read_bytes() == first

    cross = tmp_path / "cross.csv"
    assert main(["crosstest", "--tree", str(out / "best_tree.txt"), "--settings", str(short_settings),
                 "--runs", "2", "--out", str(cross), "--label", "evolved"]) == 0
    row = ComparisonResult.parse_row(cross.read_text())
    assert row["label_a"] == "evolved" and row["label_b"] == "epidemic" and row["n_a"] == 2

    # crosstest on the training scenario reproduces simulate for the same seeds
    main(["simulate", "--settings", str(short_settings), "--tree", str(out / "best_tree.txt"), "--runs", "2",
          "--no-events", "--out-dir", str(tmp_path / "sim")])
    vals = sorted(SimReport.from_text((tmp_path / "sim" / f"report_seed{s}.txt").read_text()).fitness
                  for s in (1, 2))
    assert row["median_a"] == (vals[0] + vals[1]) / 2
