import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from quadsac.records import TRAJECTORY_HEADER, EpisodeRecord, LearningCurveWriter, read_table


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 20), st.just(len(TRAJECTORY_HEADER))),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_trajectory_csv_round_trip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("rec") / "ep.csv"
    rec = EpisodeRecord(rows, terminated=True)
    rec.write_csv(path)
    back = EpisodeRecord.read_csv(path, terminated=True)
    assert np.array_equal(back.rows, rec.rows)
    assert back.total_reward == rec.total_reward


def test_summary_consistent_with_columns():
    rows = np.random.default_rng(0).normal(size=(7, len(TRAJECTORY_HEADER)))
    rec = EpisodeRecord(rows)
    s = rec.summary()
    assert s["steps"] == 7 and s["total_reward"] == rec.column("reward").sum()
    assert np.allclose(rec.distances(), np.linalg.norm(rows[:, 1:4] - rows[:, 10:13], axis=1))


def test_learning_curve_writer(tmp_path):
    path = tmp_path / "lc.csv"
    w = LearningCurveWriter(path)
    w.append(100, -3.5, {"q1_loss": 0.25})
    w.close()
    w = LearningCurveWriter(path, append=True)
    w.append(200, 1.0 / 3.0, {})
    w.close()
    header, rows = read_table(path)
    assert header[:2] == ["env_steps", "mean_eval_reward"]
    assert [r[0] for r in rows] == [100, 200]
    assert rows[1][1] == 1.0 / 3.0 and rows[0][2] == 0.25 and np.isnan(rows[1][2])
