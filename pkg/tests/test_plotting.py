import math

import pytest

from harvest.env import comm_range_radius
from harvest.plotting import paths_from_trajectory_rows, render_svg, write_svg


class TestRenderSvg:
    def test_byte_deterministic(self, config1):
        paths = [[(0.0, 1.0), (1.0, 1.5)], [(0.0, 1.0), (0.5, 2.0)]]
        assert render_svg(config1, paths) == render_svg(config1, paths)

    def test_well_formed_xml(self, config1):
        import xml.etree.ElementTree as ET
        root = ET.fromstring(render_svg(config1))
        assert root.tag.endswith("svg")

    def test_glyph_counts(self, config1):
        svg = render_svg(config1, [[(0.0, 1.0), (1.0, 1.0)]])
        # one disk + one star per target; one dot + one cross per agent
        assert svg.count("fill-opacity") == 4
        assert svg.count('fill="#d62728"/>') == 4
        assert svg.count("<polyline") == 1
        assert svg.count('r="5"') == 3

    def test_disk_radius_is_planar_projection(self, config2):
        svg = render_svg(config2)
        t = config2.targets[0]
        total = comm_range_radius(t.bandwidth, t.gain)
        planar = math.sqrt(total**2 - config2.agents[0].height ** 2)
        expected = f'r="{planar * 48.0:.3f}'.rstrip("0").rstrip(".")
        assert expected in svg

    def test_write_svg(self, config1, tmp_path):
        p1, p2 = tmp_path / "a.svg", tmp_path / "b.svg"
        write_svg(p1, config1)
        write_svg(p2, config1)
        assert p1.read_bytes() == p2.read_bytes()


class TestPathsFromRows:
    def test_groups_and_orders(self):
        rows = [
            {"step": "1", "agent_id": "0", "x": "1.0", "y": "0.0"},
            {"step": "0", "agent_id": "1", "x": "5.0", "y": "5.0"},
            {"step": "0", "agent_id": "0", "x": "0.0", "y": "0.0"},
            {"step": "1", "agent_id": "1", "x": "6.0", "y": "5.0"},
        ]
        paths = paths_from_trajectory_rows(rows)
        assert paths == [[(0.0, 0.0), (1.0, 0.0)], [(5.0, 5.0), (6.0, 5.0)]]

    def test_malformed_row(self):
        with pytest.raises(ValueError, match="malformed"):
            paths_from_trajectory_rows([{"step": "0", "agent_id": "0", "x": "nope"}])

    def test_round_trip_with_env_csv(self, tiny_scenario, tmp_path):
        from conftest import hover
        from harvest.env import (Environment, TrajectoryRecord,
                                 read_trajectory_csv, write_trajectory_csv)
        env = Environment(tiny_scenario)
        record = TrajectoryRecord()
        state = env.reset()
        record.states.append(state)
        for _ in range(2):
            out = env.step(state, hover(1))
            record.actions.append(hover(1))
            record.states.append(out.next_state)
            state = out.next_state
        path = tmp_path / "traj.csv"
        write_trajectory_csv(path, tiny_scenario, record)
        paths = paths_from_trajectory_rows(read_trajectory_csv(path))
        assert len(paths) == 1
        assert len(paths[0]) == 3
        assert paths[0][0] == (0.0, 0.0)
