import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings, strategies as st

from surgskill import datapipe as dp
from surgskill.errors import ConfigurationError, InputError, ParseError

from oracles import sliding_window_pseudocode


def write_rows(path, rows):
    path.write_text("\n".join(" ".join(str(v) for v in r) for r in rows) + "\n")
    return path


def trial(frames, task="KT", subject="S01", idx=1):
    return dp.TrialRecording(task, subject, idx, np.asarray(frames, dtype=float))


# -- parsing ------------------------------------------------------------------------

def test_read_two_line_file(tmp_path):
    rows = [np.arange(76) * 0.5, np.arange(76) - 3.0]
    out = dp.read_kinematics(write_rows(tmp_path / "k.txt", rows))
    assert out.shape == (2, 76)
    npt.assert_array_equal(out, np.array(rows))


def test_wrong_column_count_names_line(tmp_path):
    path = write_rows(tmp_path / "k.txt", [np.zeros(76), np.zeros(75)])
    with pytest.raises(ParseError) as info:
        dp.read_kinematics(path)
    assert info.value.line == 2
    assert "k.txt:2" in str(info.value) and "75" in str(info.value)


def test_non_numeric_token(tmp_path):
    row = ["0"] * 76
    row[10] = "abc"
    path = write_rows(tmp_path / "k.txt", [["1"] * 76, ["2"] * 76, row])
    with pytest.raises(ParseError, match="'abc'") as info:
        dp.read_kinematics(path)
    assert info.value.line == 3


def test_missing_file(tmp_path):
    with pytest.raises(InputError):
        dp.read_kinematics(tmp_path / "absent.txt")


def test_channel_names():
    assert len(dp.CHANNEL_NAMES) == 76
    assert dp.CHANNEL_NAMES[0] == "MTM1.x" and dp.CHANNEL_NAMES[38] == "PSM1.x"
    assert dp.CHANNEL_NAMES[75] == "PSM2.gripper_angle"


def test_validate_rejects_nan_and_width():
    with pytest.raises(InputError):
        trial(np.full((3, 76), np.nan)).validate()
    with pytest.raises(InputError):
        trial(np.zeros((3, 70))).validate()


# -- normalisation and split -----------------------------------------------------------

def test_z_normalize_example():
    f = np.tile(np.array([[1.0], [2.0], [3.0]]), (1, 76))
    out, stats = dp.z_normalize(trial(f))
    npt.assert_allclose(out.frames[:, 0], [-1.224744871391589, 0.0, 1.224744871391589], rtol=1e-12)
    npt.assert_allclose(stats.mean, 2.0)


def test_z_normalize_constant_channel(rng):
    f = rng.normal(size=(50, 76))
    f[:, 7] = 4.2
    out, stats = dp.z_normalize(trial(f))
    assert np.all(np.isfinite(out.frames))
    npt.assert_allclose(out.frames[:, 7], 0.0, atol=1e-12)
    assert stats.guarded.tolist().count(True) == 1
    fives, _ = dp.z_normalize(trial(np.full((3, 76), 5.0)))
    npt.assert_array_equal(fives.frames, 0.0)


def test_z_normalize_moments(rng):
    out, _ = dp.z_normalize(trial(rng.normal(3, 5, size=(200, 76))))
    npt.assert_allclose(out.frames.mean(axis=0), 0, atol=1e-12)
    npt.assert_allclose(out.frames.std(axis=0), 1, rtol=1e-12)


def test_z_normalize_idempotent(rng):
    once, _ = dp.z_normalize(trial(rng.normal(size=(80, 76))))
    twice, _ = dp.z_normalize(once)
    npt.assert_allclose(twice.frames, once.frames, atol=1e-12)


def test_z_normalize_single_frame():
    with pytest.raises(InputError):
        dp.z_normalize(trial(np.zeros((1, 76))))


def test_split_is_a_partition(rng):
    f = rng.normal(size=(20, 76))
    mtm, psm = dp.split_manipulators(trial(f), 2)
    npt.assert_array_equal(np.hstack([mtm.frames, psm.frames]), f)
    assert (mtm.side, psm.side) == ("MTM", "PSM")
    assert mtm.label == psm.label == 2
    assert mtm.frames.shape == psm.frames.shape == (20, 38)


# -- cropping ----------------------------------------------------------------------

def test_crop_starts_example():
    assert dp.crop_starts(150, 60, 30).tolist() == [0, 30, 60, 90]
    assert dp.crop_count(150, 60, 30) == 4


def test_short_trial_yields_nothing():
    assert dp.crop_count(59, 60, 30) == 0
    assert len(dp.crop_starts(59, 60, 30)) == 0
    assert dp.crop_count(60, 60, 30) == 1


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2000), st.integers(1, 200), st.integers(1, 200))
def test_crop_count_matches_loop(length, width, step):
    m, n = 0, 0
    while m + width <= length:
        m += step
        n += 1
    assert dp.crop_count(length, width, step) == n == len(dp.crop_starts(length, width, step))


def test_crops_are_exact_slices(rng):
    f = rng.normal(size=(137, 38))
    inst = dp.ManipulatorInstance(("KT", "S01", 1), "MTM", f, 0)
    crops = dp.sliding_window_crop(inst, dp.WindowConfig(60, 30))
    ref = sliding_window_pseudocode(f, 30, 60)
    assert len(crops) == len(ref) == 3
    for c, r in zip(crops, ref):
        assert c.values.tobytes() == r.tobytes()
        assert c.values.tobytes() == f[c.start:c.start + 60].tobytes()


def test_window_config_rejects_zero():
    with pytest.raises(ConfigurationError):
        dp.WindowConfig(60, 0)


def test_build_crops_order_and_provenance(synthetic_corpus):
    trials = synthetic_corpus[0][:3]
    crops = dp.build_crops(trials, dp.LabelingPolicy(), dp.WindowConfig(60, 30))
    expected = sum(2 * dp.crop_count(len(t.recording.frames), 60, 30) for t in trials)
    assert len(crops) == expected
    assert crops.values.shape == (expected, 60, 38)
    assert np.all(np.diff(crops.trial_ids) >= 0)
    first = trials[0]
    normed, _ = dp.z_normalize(first)
    npt.assert_array_equal(crops.values[0], normed.recording.frames[:60, :38])
    psm0 = np.flatnonzero((crops.trial_ids == 0) & (crops.sides == 1))[0]
    npt.assert_array_equal(crops.values[psm0], normed.recording.frames[:60, 38:])


# -- labels -------------------------------------------------------------------------

GRS = dp.LabelingPolicy("grs")


@pytest.mark.parametrize("task, score, level", [
    ("KT", 14, 0), ("KT", 15, 1), ("KT", 20, 2), ("NP", 17, 1),
    ("SU", 18, 0), ("SU", 19, 1), ("SU", 23, 1), ("SU", 24, 2), ("SU", 30, 2), ("NP", 6, 0),
])
def test_grs_labels(task, score, level):
    assert dp.assign_label(dp.LabelRecord(0, score), GRS, task) == level


def test_exclusive_thresholds():
    policy = dp.LabelingPolicy("grs", inclusive=False)
    assert dp.assign_label(dp.LabelRecord(0, 24), policy, "SU") == 1
    assert dp.grs_band("SU", 2, policy) == (25, 30)


def test_self_policy_ignores_score():
    assert dp.assign_label(dp.LabelRecord(2, 7), dp.LabelingPolicy(), "SU") == 2


def test_grs_out_of_range():
    with pytest.raises(InputError):
        dp.assign_label(dp.LabelRecord(0, 31), GRS, "KT")
    with pytest.raises(InputError):
        dp.LabelRecord(3, 10)


def test_bad_policy():
    with pytest.raises(ConfigurationError):
        dp.LabelingPolicy("vote")
    with pytest.raises(ConfigurationError):
        dp.LabelingPolicy("grs", thresholds={"SU": (20, 20)})


def test_parse_level_aliases():
    assert [dp.parse_level(x) for x in ("Novice", "I", "expert", "3")] == [0, 1, 2, 2]
    with pytest.raises(InputError):
        dp.parse_level("guru")


# -- synthetic corpus and files ---------------------------------------------------------

def test_synthetic_deterministic(synthetic_corpus):
    again, entries = dp.generate_synthetic_corpus(dp.SyntheticSpec())
    for a, b in zip(synthetic_corpus[0], again):
        assert a.key == b.key
        assert a.recording.frames.tobytes() == b.recording.frames.tobytes()
    assert entries == synthetic_corpus[1]


def test_synthetic_shape(synthetic_corpus):
    trials, _ = synthetic_corpus
    kt = [t for t in trials if t.recording.task == "KT"]
    assert len(kt) == 40
    assert 2 * len(kt) == 80
    assert {t.recording.subject_id for t in kt} == {f"S{i:02d}" for i in range(1, 9)}
    for t in trials:
        assert 240 <= len(t.recording.frames) <= 420


def test_synthetic_policies_agree(synthetic_corpus):
    for t in synthetic_corpus[0]:
        assert t.label(GRS) == t.label(dp.LabelingPolicy())
    novice_kt = [t.labels.grs_score for t in synthetic_corpus[0]
                 if t.recording.task == "KT" and t.labels.self_proclaimed == 0]
    assert novice_kt and all(6 <= s <= 14 for s in novice_kt)


def test_synthetic_rotations_are_valid(synthetic_corpus):
    for t in synthetic_corpus[0][:10]:
        t.recording.validate(check_rotation=True)


def test_synthetic_rejects_single_subject():
    with pytest.raises(InputError):
        dp.generate_synthetic_corpus(dp.SyntheticSpec(n_subjects=1))


def test_manifest_roundtrip(tmp_path):
    spec = dp.SyntheticSpec(n_subjects=3, trials_per_subject=2, length_range=(70, 90), tasks=("NP",))
    trials, entries = dp.generate_synthetic_corpus(spec)
    manifest = dp.write_corpus(trials, entries, tmp_path)
    loaded = dp.load_corpus(manifest)
    assert [t.key for t in loaded] == [t.key for t in trials]
    for a, b in zip(loaded, trials):
        assert a.labels == b.labels
        npt.assert_allclose(a.recording.frames, b.recording.frames, rtol=1e-6, atol=1e-6)


def test_manifest_comments_and_bad_header(tmp_path):
    good = tmp_path / "m.csv"
    good.write_text("# corpus\n" + ",".join(dp.MANIFEST_FIELDS) + "\nKT,S01,1,a.txt,12,Novice\n")
    entries = dp.read_manifest(good)
    assert entries[0].self_proclaimed == 0 and entries[0].kinematics_path == str(tmp_path / "a.txt")
    bad = tmp_path / "bad.csv"
    bad.write_text("task,subject\nKT,S01\n")
    with pytest.raises(ParseError):
        dp.read_manifest(bad)


def test_jigsaws_layout(tmp_path, rng):
    task_dir = tmp_path / "Knot_Tying"
    (task_dir / "kinematics" / "AllGestures").mkdir(parents=True)
    (task_dir / "meta_file_Knot_Tying.txt").write_text("Knot_Tying_B001\tN\t13\t2 2 2 2 2 3\n")
    write_rows(task_dir / "kinematics" / "AllGestures" / "Knot_Tying_B001.txt", rng.normal(size=(5, 76)))
    (entry,) = dp.jigsaws_manifest(tmp_path)
    assert (entry.task, entry.subject_id, entry.trial_index, entry.grs_score) == ("KT", "B", 1, 13)
    t = dp.parse_trial(tmp_path / entry.kinematics_path,
                       dp.ManifestEntry(**{**entry.__dict__, "kinematics_path": str(tmp_path / entry.kinematics_path)}))
    assert t.recording.frames.shape == (5, 76)


def test_crop_cache_roundtrip(tmp_path, synthetic_corpus):
    crops = dp.build_crops(synthetic_corpus[0][:4], dp.LabelingPolicy(), dp.WindowConfig(30, 30))
    crops.save(tmp_path / "a.npz")
    back = dp.CropSet.load(tmp_path / "a.npz")
    assert back.values.tobytes() == crops.values.tobytes()
    assert back.trial_keys == crops.trial_keys and back.window == crops.window
    npt.assert_array_equal(back.labels, crops.labels)
    back.save(tmp_path / "b.npz")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
