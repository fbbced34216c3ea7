"""
Tests for modality containers, phantom generation, slicing, augmentation and batching.
"""

import numpy as np
import pytest

from config import AugmentConfig
from data import (
    MODALITIES,
    Batch,
    ModalityId,
    ModalityStack,
    PresenceMask,
    RandomDraw,
    add_noise,
    augment,
    case_seed,
    draw_augmentation,
    extract_slices,
    generate_phantom,
    list_cases,
    load_case,
    load_stacks,
    make_batches,
    normalize,
    write_phantom_dataset,
)
from errors import AlignmentError, ConfigurationError, DataError, EmptyFusionError, PreconditionError
from niftilite import Volume


def _stack(rng, shape=(16, 16), presence=None, case_id="case", z=0):
    presence = presence or PresenceMask.full()
    planes = {m: rng.normal(size=shape).astype(np.float32) for m in presence.modalities}
    return ModalityStack(planes, presence, rng.integers(0, 4, size=shape), case_id=case_id, z=z)


def test_presence_mask():
    mask = PresenceMask.without([ModalityId.T1, ModalityId.FLAIR])
    assert mask.modalities == [ModalityId.T1C, ModalityId.T2]
    assert mask.absent == [ModalityId.T1, ModalityId.FLAIR]
    assert ModalityId.T1 not in mask
    assert str(mask) == "t1c,t2"
    assert PresenceMask.of([ModalityId.T2, ModalityId.T1C]) == mask
    assert PresenceMask.full().modalities == list(MODALITIES)
    with pytest.raises(EmptyFusionError):
        PresenceMask.without(MODALITIES)
    with pytest.raises(EmptyFusionError):
        PresenceMask((False, False, False, False))


def test_modality_names():
    assert ModalityId.parse(" FLAIR ") is ModalityId.FLAIR
    assert ModalityId.parse_list("t1,t1c") == [ModalityId.T1, ModalityId.T1C]
    assert ModalityId.parse_list("") == []
    assert ModalityId.T1C.file_name == "t1c.nii"
    with pytest.raises(DataError):
        ModalityId.parse("pd")


def test_stack_zero_fills_absent_modalities():
    rng = np.random.default_rng(0)
    stack = _stack(rng, presence=PresenceMask.without([ModalityId.T2]))
    assert set(stack.slices) == set(MODALITIES)
    np.testing.assert_array_equal(stack.slices[ModalityId.T2], np.zeros((16, 16), dtype=np.float32))
    assert stack.shape == (16, 16)


def test_stack_alignment_errors():
    label = np.zeros((4, 4), dtype=np.int64)
    with pytest.raises(AlignmentError):
        ModalityStack({}, PresenceMask.full(), label)
    planes = {m: np.zeros((4, 5), dtype=np.float32) for m in MODALITIES}
    with pytest.raises(AlignmentError):
        ModalityStack(planes, PresenceMask.full(), label)


def test_normalize():
    plane = np.zeros((4, 4), dtype=np.float32)
    plane[1:3, 1:3] = [[1.0, 2.0], [3.0, 4.0]]
    out = normalize(plane)
    assert out.dtype == np.float32
    foreground = out[1:3, 1:3]
    assert foreground.mean() == pytest.approx(0.0, abs=1e-6)
    assert foreground.std() == pytest.approx(1.0, abs=1e-6)
    assert np.count_nonzero(out[0]) == 0
    np.testing.assert_array_equal(normalize(np.full((3, 3), 2.5)), np.zeros((3, 3)))
    np.testing.assert_array_equal(normalize(np.zeros((3, 3))), np.zeros((3, 3)))


def test_phantom_is_deterministic():
    volumes_a, label_a = generate_phantom(11, (16, 16, 16))
    volumes_b, label_b = generate_phantom(11, (16, 16, 16))
    np.testing.assert_array_equal(label_a.voxels, label_b.voxels)
    for modality in MODALITIES:
        np.testing.assert_array_equal(volumes_a[modality].voxels, volumes_b[modality].voxels)
    volumes_c, _ = generate_phantom(12, (16, 16, 16))
    assert not np.array_equal(volumes_a[ModalityId.T1].voxels, volumes_c[ModalityId.T1].voxels)


def test_phantom_holds_nested_regions():
    volumes, label = generate_phantom(3, (32, 32, 32))
    values = set(np.unique(label.voxels).tolist())
    assert values == {0.0, 1.0, 2.0, 3.0}
    for volume in volumes.values():
        assert volume.extents == (32, 32, 32)
        # outside the brain ellipsoid the image is exactly zero
        assert volume.voxels[0, 0, 0] == 0.0


def test_phantom_minimum_extent():
    with pytest.raises(PreconditionError):
        generate_phantom(0, (16, 15, 16))


def test_phantom_dataset_round_trip(tmp_path):
    written = write_phantom_dataset(tmp_path / "phantoms", 2, (16, 16, 16), seed=4)
    assert [p.name for p in written] == ["case_000", "case_001"]
    assert list_cases(tmp_path / "phantoms") == written

    volumes, label = load_case(written[1])
    _, expected_label = generate_phantom(case_seed(4, 1), (16, 16, 16))
    np.testing.assert_array_equal(label.voxels, expected_label.voxels)
    assert set(volumes) == set(MODALITIES)


def test_load_case_never_opens_unrequested_files(tmp_path):
    case_dir = write_phantom_dataset(tmp_path, 1, (16, 16, 16), seed=0)[0]
    (case_dir / "t1.nii").unlink()
    volumes, _ = load_case(case_dir, [ModalityId.T1C, ModalityId.T2, ModalityId.FLAIR])
    assert ModalityId.T1 not in volumes
    with pytest.raises(DataError):
        load_case(case_dir)


def test_list_cases_errors(tmp_path):
    with pytest.raises(DataError):
        list_cases(tmp_path / "absent")
    with pytest.raises(DataError):
        list_cases(tmp_path)


def test_extract_slices(tmp_path):
    case_dir = write_phantom_dataset(tmp_path, 1, (16, 20, 18), seed=2)[0]
    stacks = load_stacks(case_dir, [ModalityId.T2, ModalityId.FLAIR])
    assert len(stacks) == 18
    assert [s.z for s in stacks] == list(range(18))
    assert stacks[0].shape == (16, 20)
    assert stacks[0].presence == PresenceMask.of([ModalityId.T2, ModalityId.FLAIR])
    assert stacks[5].case_id == "case_000"
    np.testing.assert_array_equal(stacks[9].slices[ModalityId.T1], np.zeros((16, 20), dtype=np.float32))

    volumes, label = load_case(case_dir)
    volumes[ModalityId.T1] = Volume(np.zeros((16, 20, 17), dtype=np.float32))
    with pytest.raises(AlignmentError):
        extract_slices(volumes, label)


def test_identity_augmentation_keeps_the_stack():
    stack = _stack(np.random.default_rng(1))
    cfg = AugmentConfig(crop_size=16, final_size=16)
    out = augment(stack, cfg, RandomDraw())
    for modality in MODALITIES:
        np.testing.assert_allclose(out.slices[modality], stack.slices[modality], atol=1e-6)
    np.testing.assert_array_equal(out.label, stack.label)


def test_flips_mirror_every_plane():
    stack = _stack(np.random.default_rng(2))
    cfg = AugmentConfig(crop_size=16, final_size=16)
    out = augment(stack, cfg, RandomDraw(hflip=True, vflip=True))
    np.testing.assert_allclose(out.slices[ModalityId.T2], stack.slices[ModalityId.T2][::-1, ::-1], atol=1e-6)
    np.testing.assert_array_equal(out.label, stack.label[::-1, ::-1])


@pytest.mark.parametrize("seed", range(5))
def test_random_augmentation_shapes_and_labels(seed):
    rng = np.random.default_rng(seed)
    presence = PresenceMask.without([ModalityId.T1C])
    stack = _stack(rng, presence=presence)
    cfg = AugmentConfig(crop_size=12, final_size=16, shift_rotate_p=1.0)
    draw = draw_augmentation(cfg, stack.shape, np.random.default_rng(seed))
    assert draw == draw_augmentation(cfg, stack.shape, np.random.default_rng(seed))

    out = augment(stack, cfg, draw)
    assert out.shape == (16, 16)
    assert out.presence == presence
    assert set(np.unique(out.label)) <= set(np.unique(stack.label))
    np.testing.assert_array_equal(out.slices[ModalityId.T1C], np.zeros((16, 16), dtype=np.float32))


def test_crop_larger_than_slice():
    stack = _stack(np.random.default_rng(0), shape=(8, 8))
    cfg = AugmentConfig(crop_size=12, final_size=12)
    with pytest.raises(PreconditionError):
        draw_augmentation(cfg, stack.shape, np.random.default_rng(0))
    with pytest.raises(PreconditionError):
        augment(stack, cfg, RandomDraw())


def test_make_batches():
    rng = np.random.default_rng(0)
    stacks = [_stack(rng, shape=(4, 4), case_id=f"s{z}", z=z) for z in range(5)]

    batches = make_batches(stacks, 2, shuffle_seed=9)
    assert [b.size for b in batches] == [2, 2, 1]
    assert [b.size for b in make_batches(stacks, 2, shuffle_seed=9, contrastive=True)] == [2, 2]

    again = make_batches(stacks, 2, shuffle_seed=9)
    for a, b in zip(batches, again):
        np.testing.assert_array_equal(a.labels, b.labels)
        assert a.case_ids == b.case_ids
    assert sorted(c for b in batches for c in b.case_ids) == [f"s{z}" for z in range(5)]

    with pytest.raises(ConfigurationError):
        make_batches(stacks, 1, shuffle_seed=0, contrastive=True)
    with pytest.raises(ConfigurationError):
        make_batches(stacks, 0, shuffle_seed=0)


def test_batch_tensors_and_onehot():
    rng = np.random.default_rng(0)
    stacks = [_stack(rng, shape=(4, 6)) for _ in range(3)]
    batch = Batch.from_stacks(stacks)
    assert batch.images[ModalityId.FLAIR].shape == (3, 1, 4, 6)
    onehot = batch.onehot()
    assert onehot.shape == (3, 4, 4, 6)
    np.testing.assert_array_equal(onehot.data.sum(axis=1), np.ones((3, 4, 6)))

    batch.labels[0, 0, 0] = 4
    with pytest.raises(DataError):
        batch.onehot()
    with pytest.raises(AlignmentError):
        Batch.from_stacks([])
    with pytest.raises(AlignmentError):
        Batch.from_stacks([stacks[0], _stack(rng, shape=(6, 4))])


def test_add_noise_touches_present_planes_only():
    presence = PresenceMask.without([ModalityId.T1])
    stack = _stack(np.random.default_rng(0), presence=presence)
    assert add_noise(stack, 0.0, np.random.default_rng(0)) is stack
    noisy = add_noise(stack, 0.1, np.random.default_rng(0))
    assert not np.array_equal(noisy.slices[ModalityId.T2], stack.slices[ModalityId.T2])
    np.testing.assert_array_equal(noisy.slices[ModalityId.T1], np.zeros((16, 16), dtype=np.float32))
    np.testing.assert_array_equal(noisy.label, stack.label)
