import numpy as np
import pytest

from stylemotion.skeleton import FEATURE_JOINTS, NUM_BONES, Skeleton, default_skeleton


def test_default_skeleton_shape():
    skel = default_skeleton()
    assert skel.num_joints == FEATURE_JOINTS
    assert len(skel.bones) == NUM_BONES
    assert skel.parents[0] is None
    for j, p in skel.bones:
        assert p < j


def test_end_effectors_and_feet():
    skel = default_skeleton()
    lh, rh, lf, rf = skel.end_effectors
    assert skel.names[lh] == "LeftHand"
    assert skel.names[rh] == "RightHand"
    assert skel.names[lf] == "LeftFoot"
    assert skel.names[rf] == "RightFoot"
    assert skel.feet == (lf, rf)


def test_mirror_map_is_involution():
    skel = default_skeleton()
    m = skel.mirror_map()
    assert sorted(m) == list(range(skel.num_joints))
    for j in range(skel.num_joints):
        assert m[m[j]] == j
    assert skel.names[m[skel.index("LeftHand")]] == "RightHand"
    assert m[skel.index("Spine")] == skel.index("Spine")


def test_topology_validation():
    with pytest.raises(ValueError):
        Skeleton(names=["a", "b"], parents=[None, 5], offsets=np.zeros((2, 3)))
    with pytest.raises(ValueError):
        Skeleton(names=["a"], parents=[0], offsets=np.zeros((1, 3)))


def test_rest_foot_height_inside_contact_ball():
    """FK of the rest pose puts the feet within 1 cm of the floor."""
    skel = default_skeleton()
    world = np.zeros((skel.num_joints, 3))
    for j, p in enumerate(skel.parents):
        world[j] = skel.offsets[j] if p is None else world[p] + skel.offsets[j]
    for f in skel.feet:
        assert 0.0 <= world[f, 1] <= 0.01
