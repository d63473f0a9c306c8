"""World-model tests: loading, mobility transitions, grasping, collisions."""

import json

import numpy as np
import pytest

from abatre.geometry import BoxShape, Capsule, CylinderShape, Pose
from abatre.perception import CameraModel
from abatre.scene import (
    ATTACH_THRESHOLD,
    ComponentCategory,
    ComponentNotFoundError,
    DropZone,
    Mobility,
    PrecedenceError,
    SceneComponent,
    SceneValidationError,
    SceneWorld,
    TooFarError,
    WrongStateError,
    attach,
    collides,
    detach,
    load_scene,
    make_movable,
    mobility_rank,
    move_attached,
    world_from_dict,
)

TOOL_DOWN = np.array([1.0, 0.0, 0.0, 0.0])


def tiny_camera():
    return CameraModel(
        fx=100.0, fy=100.0, u0=32.0, v0=24.0, width=64, height=48,
        extrinsics=Pose(np.array([0.0, 0.0, 1.5]), np.array([0.0, 1.0, 0.0, 0.0])),
    )


def make_world(components, zones=None):
    return SceneWorld(
        components=tuple(components),
        drop_zones=zones or {},
        camera=tiny_camera(),
        rng_seed=0,
    )


def bolt(cid="b1", pos=(0.0, 0.0, 0.235), locks=(), mobility=Mobility.STATIC):
    return SceneComponent(
        id=cid,
        category=ComponentCategory.BOLT,
        pose=Pose(np.asarray(pos, float), TOOL_DOWN.copy()),
        geometry=CylinderShape(0.008, 0.03),
        mobility=mobility,
        locks=frozenset(locks),
    )


def zone_at(pos, extent=(0.3, 0.3, 0.3)):
    return DropZone(Pose(np.asarray(pos, float), TOOL_DOWN.copy()), np.asarray(extent, float))


class TestLoadScene:
    def test_benchmark_scene_counts(self, benchmark_world):
        by_cat = {}
        for c in benchmark_world.components:
            by_cat.setdefault(c.category, []).append(c)
        assert len(by_cat[ComponentCategory.BOLT]) == 6
        assert len(by_cat[ComponentCategory.CABLE]) == 2
        assert len(by_cat[ComponentCategory.MODULE]) == 4
        for cat in (
            ComponentCategory.MSD,
            ComponentCategory.CONTACTOR,
            ComponentCategory.PACK_BASE,
            ComponentCategory.BMS_CONTROLLER,
        ):
            assert len(by_cat[cat]) == 1
        assert len(by_cat[ComponentCategory.POSITIVE_BUS_BAR]) == 1
        assert len(by_cat[ComponentCategory.NEGATIVE_BUS_BAR]) == 1
        assert all(c.mobility is Mobility.STATIC for c in benchmark_world.components)

    def test_empty_components_rejected(self, benchmark_world, tmp_path):
        doc = json.loads(benchmark_scene_text())
        doc["components"] = []
        with pytest.raises(SceneValidationError, match="no disassemblable"):
            world_from_dict(doc)

    def test_unknown_lock_rejected(self):
        doc = json.loads(benchmark_scene_text())
        doc["components"][5]["locks"] = ["not_a_real_bolt"]
        with pytest.raises(SceneValidationError, match="unknown ids"):
            world_from_dict(doc)

    def test_duplicate_ids_rejected(self):
        doc = json.loads(benchmark_scene_text())
        doc["components"][1]["id"] = doc["components"][2]["id"]
        with pytest.raises(SceneValidationError, match="duplicate"):
            world_from_dict(doc)

    def test_missing_drop_zone_rejected(self):
        doc = json.loads(benchmark_scene_text())
        del doc["drop_zones"]["Bolt"]
        with pytest.raises(SceneValidationError, match="drop zone"):
            world_from_dict(doc)

    def test_missing_file(self, tmp_path):
        with pytest.raises(SceneValidationError):
            load_scene(tmp_path / "nope.json")

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json", encoding="utf-8")
        with pytest.raises(SceneValidationError, match="JSON"):
            load_scene(p)


def benchmark_scene_text():
    from abatre.cli import benchmark_scene_path

    return benchmark_scene_path().read_text(encoding="utf-8")


class TestMakeMovable:
    def test_pose_unchanged(self):
        w = make_world([bolt()], {ComponentCategory.BOLT: zone_at((1, 0, 0.1))})
        before = w.component("b1").pose
        w2 = make_movable(w, "b1")
        after = w2.component("b1")
        assert after.mobility is Mobility.MOVABLE
        assert np.array_equal(before.position, after.pose.position)
        assert np.array_equal(before.quaternion, after.pose.quaternion)

    def test_precedence_violation(self):
        locked = bolt("cable_like", locks=("b1",))
        w = make_world([bolt(), locked])
        with pytest.raises(PrecedenceError):
            make_movable(w, "cable_like")

    def test_unlocked_after_removal(self):
        w = make_world(
            [bolt(), bolt("c", pos=(0.05, 0, 0.235), locks=("b1",))],
            {ComponentCategory.BOLT: zone_at((0, 0, 0.235))},
        )
        w = make_movable(w, "b1")
        w = attach(w, "b1", Pose(w.component("b1").grasp_point(), TOOL_DOWN.copy()))
        w, _ = detach(w, "b1")
        w = make_movable(w, "c")
        assert w.component("c").mobility is Mobility.MOVABLE

    def test_missing_component(self):
        w = make_world([bolt()])
        with pytest.raises(ComponentNotFoundError):
            make_movable(w, "ghost")

    def test_wrong_state(self):
        w = make_world([bolt()])
        w = make_movable(w, "b1")
        with pytest.raises(WrongStateError):
            make_movable(w, "b1")


class TestAttachDetach:
    def test_attach_within_threshold(self):
        w = make_movable(make_world([bolt()]), "b1")
        gp = w.component("b1").grasp_point()
        gripper = Pose(gp + np.array([0.002, 0.0, 0.0]), TOOL_DOWN.copy())
        w2 = attach(w, "b1", gripper)
        assert w2.component("b1").mobility is Mobility.ATTACHED

    def test_attach_too_far(self):
        w = make_movable(make_world([bolt()]), "b1")
        gp = w.component("b1").grasp_point()
        gripper = Pose(gp + np.array([0.05, 0.0, 0.0]), TOOL_DOWN.copy())
        with pytest.raises(TooFarError):
            attach(w, "b1", gripper)

    def test_attach_threshold_boundary(self):
        w = make_movable(make_world([bolt()]), "b1")
        gp = w.component("b1").grasp_point()
        ok = Pose(gp + np.array([ATTACH_THRESHOLD - 1e-6, 0, 0]), TOOL_DOWN.copy())
        assert attach(w, "b1", ok).component("b1").mobility is Mobility.ATTACHED

    def test_attach_wrong_state(self):
        w = make_world([bolt()])
        gp = w.component("b1").grasp_point()
        with pytest.raises(WrongStateError):
            attach(w, "b1", Pose(gp, TOOL_DOWN.copy()))

    def test_detach_in_zone(self):
        zone_center = np.array([0.5, 0.0, 0.15])
        w = make_world([bolt()], {ComponentCategory.BOLT: zone_at(zone_center)})
        w = make_movable(w, "b1")
        gp = w.component("b1").grasp_point()
        w = attach(w, "b1", Pose(gp, TOOL_DOWN.copy()))
        w = move_attached(w, Pose(zone_center + np.array([0, 0, 0.05]), TOOL_DOWN.copy()))
        w, in_zone = detach(w, "b1")
        assert w.component("b1").mobility is Mobility.REMOVED
        assert in_zone

    def test_detach_out_of_zone(self):
        w = make_world([bolt()], {ComponentCategory.BOLT: zone_at((2.0, 0, 0.15))})
        w = make_movable(w, "b1")
        gp = w.component("b1").grasp_point()
        w = attach(w, "b1", Pose(gp, TOOL_DOWN.copy()))
        w, in_zone = detach(w, "b1")
        assert w.component("b1").mobility is Mobility.REMOVED
        assert not in_zone

    def test_detach_never_attached(self):
        w = make_world([bolt()])
        with pytest.raises(WrongStateError):
            detach(w, "b1")


class TestRigidAttachment:
    def test_carried_pose_follows_gripper(self):
        rng = np.random.default_rng(4)
        w = make_movable(make_world([bolt()]), "b1")
        gp = w.component("b1").grasp_point()
        gripper = Pose(gp, TOOL_DOWN.copy())
        w = attach(w, "b1", gripper)
        rel = w.component("b1").grip_transform
        for _ in range(25):
            qv = rng.normal(size=4)
            qv /= np.linalg.norm(qv)
            gripper = Pose(rng.uniform(-1, 1, 3), qv)
            w = move_attached(w, gripper)
            expected = gripper.compose(rel)
            got = w.component("b1").pose
            assert np.allclose(got.position, expected.position, atol=1e-12)
            assert np.allclose(
                np.abs(got.quaternion @ expected.quaternion), 1.0, atol=1e-12
            )


class TestMobilityHistoryProperty:
    def test_random_operation_sequences_stay_ordered(self):
        """Mobility never moves backward, for any operation sequence."""
        rng = np.random.default_rng(99)
        for _ in range(60):
            w = make_world(
                [bolt(), bolt("b2", pos=(0.1, 0, 0.235), locks=("b1",))],
                {ComponentCategory.BOLT: zone_at((0.5, 0, 0.15))},
            )
            history = {c.id: [c.mobility] for c in w.components}
            for _ in range(12):
                cid = ("b1", "b2")[rng.integers(0, 2)]
                op = rng.integers(0, 3)
                try:
                    if op == 0:
                        w = make_movable(w, cid)
                    elif op == 1:
                        gp = w.component(cid).grasp_point()
                        w = attach(w, cid, Pose(gp, TOOL_DOWN.copy()))
                    else:
                        w, _ = detach(w, cid)
                except (WrongStateError, PrecedenceError, TooFarError):
                    continue
                for c in w.components:
                    if history[c.id][-1] is not c.mobility:
                        history[c.id].append(c.mobility)
            for cid, seq in history.items():
                ranks = [mobility_rank(m) for m in seq]
                assert ranks == sorted(ranks), f"{cid}: {seq}"
                # no state skipped on record boundaries is not required, but
                # the order must match the allowed chain
                assert all(b - a >= 1 for a, b in zip(ranks, ranks[1:]))


class TestCollides:
    def test_capsule_inside_module(self, benchmark_world):
        cap = Capsule(np.array([-0.16, -0.11, 0.12]), np.array([-0.14, -0.11, 0.12]), 0.01)
        assert collides(benchmark_world, [cap])

    def test_capsule_high_above_pack(self, benchmark_world):
        cap = Capsule(np.array([-0.3, 0.0, 1.25]), np.array([0.3, 0.0, 1.25]), 0.05)
        assert not collides(benchmark_world, [cap])

    def test_tangent_contact_not_collision(self):
        comp = SceneComponent(
            id="box",
            category=ComponentCategory.MODULE,
            pose=Pose(np.zeros(3), TOOL_DOWN.copy()),
            geometry=BoxShape(np.array([0.4, 0.4, 0.2])),
        )
        w = make_world([comp], {ComponentCategory.MODULE: zone_at((1, 0, 0.15))})
        r = 0.05
        cap = Capsule(np.array([-0.1, 0.0, 0.1 + r]), np.array([0.1, 0.0, 0.1 + r]), r)
        assert not collides(w, [cap])
        lower = Capsule(
            np.array([-0.1, 0.0, 0.1 + r - 1e-9]), np.array([0.1, 0.0, 0.1 + r - 1e-9]), r
        )
        assert collides(w, [lower])

    def test_removed_and_attached_excluded(self):
        w = make_world([bolt()], {ComponentCategory.BOLT: zone_at((0.5, 0, 0.15))})
        probe = Capsule(np.array([0, 0, 0.20]), np.array([0, 0, 0.26]), 0.02)
        assert collides(w, [probe])
        w = make_movable(w, "b1")
        gp = w.component("b1").grasp_point()
        w = attach(w, "b1", Pose(gp, TOOL_DOWN.copy()))
        assert not collides(w, [probe])  # held parts move with the gripper
        w, _ = detach(w, "b1")
        assert not collides(w, [probe])


class TestCollisionOracleEquivalence:
    def test_thousand_random_capsule_pairs(self):
        """collides vs. a 10^4-sample axis oracle: no disagreements outside
        the 1e-3 sampling ambiguity band."""
        from abatre.geometry import aabb_point_distance, cylinder_point_distance

        rng = np.random.default_rng(2024)
        checked = 0
        for trial in range(1000):
            center = rng.uniform(-0.5, 0.5, 3)
            qv = rng.normal(size=4)
            qv /= np.linalg.norm(qv)
            pose = Pose(center, qv)
            p0 = rng.uniform(-1, 1, 3)
            p1 = rng.uniform(-1, 1, 3)
            radius = rng.uniform(0.01, 0.3)
            if trial % 2 == 0:
                extents = rng.uniform(0.05, 0.6, 3)
                geom = BoxShape(extents)
                dist_local = lambda P: aabb_point_distance(P, 0.5 * extents)
            else:
                r, h = rng.uniform(0.02, 0.3), rng.uniform(0.05, 0.6)
                geom = CylinderShape(r, h)
                dist_local = lambda P: cylinder_point_distance(P, r, 0.5 * h)
            world = make_world(
                [
                    SceneComponent(
                        id="obstacle", category=ComponentCategory.MODULE,
                        pose=pose, geometry=geom,
                    )
                ]
            )
            got = collides(world, [Capsule(p0, p1, radius)])
            R = pose.rotation()
            a0 = R.T @ (p0 - pose.position)
            a1 = R.T @ (p1 - pose.position)
            ts = np.linspace(0.0, 1.0, 10_001)[:, None]
            sampled = float(dist_local(a0 + ts * (a1 - a0)).min())
            if abs(sampled - radius) > 1e-3:
                checked += 1
                assert got == (sampled < radius), f"trial {trial}"
        assert checked > 900


def test_move_attached_without_attachment_is_noop():
    w = make_world([bolt()])
    w2 = move_attached(w, Pose(np.array([1.0, 1.0, 1.0]), TOOL_DOWN.copy()))
    assert w2 is w


class TestPrecedenceInvariant:
    def test_cable_never_movable_before_bolts_removed(self, benchmark_world):
        w = benchmark_world
        cable = w.component("cable_pos")
        for bolt_id in sorted(cable.locks):
            with pytest.raises(PrecedenceError):
                make_movable(w, "cable_pos")
            w = make_movable(w, bolt_id)
            gp = w.component(bolt_id).grasp_point()
            w = attach(w, bolt_id, Pose(gp, TOOL_DOWN.copy()))
            w, _ = detach(w, bolt_id)
        w = make_movable(w, "cable_pos")
        assert w.component("cable_pos").mobility is Mobility.MOVABLE
