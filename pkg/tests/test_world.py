import numpy as np
import pytest

from conftest import PALLET_SLOT, PALLET_TOP, TABLE_TOP, make_workspace, palletise_actions
from goc_fdr.scene_graph.geometry import workspace_scene_graph
from goc_fdr.scene_graph.triplets import Triplet
from goc_fdr.world import (
    Action,
    ConfigError,
    FaultInjection,
    MotionCommand,
    ObjectState,
    PointCloud,
    RobotState,
    Workspace,
    box_surface_points,
    read_point_clouds,
    write_point_clouds,
)


def test_empty_queue_only_advances_time(ws):
    before = ws.snapshot()[1:]
    ws.step(0.1)
    assert ws.snapshot()[1:] == before
    assert ws.time == pytest.approx(0.1)
    assert ws.step_index == 1


def test_move_to_kinematics(ws):
    robot = ws.robots[10]
    start = robot.gripper_pose.copy()
    target = start + np.array([1.0, 0.0, 0.0])
    robot.motion_queue.append(MotionCommand("move_to", target=target, speed=0.5))
    ws.step(0.1)
    assert np.allclose(robot.gripper_pose, start + [0.05, 0.0, 0.0], atol=1e-12)


def test_step_rejects_nonpositive_dt(ws):
    with pytest.raises(ValueError):
        ws.step(0.0)


def test_out_of_bounds_motion_fails_without_exception(ws):
    robot = ws.robots[10]
    robot.motion_queue.append(MotionCommand("move_to", target=[50.0, 0.0, 1.0]))
    done = ws.step(0.05)
    assert done[0][1].status == "failed"
    assert not robot.motion_queue


def test_nominal_palletising_reaches_goal_pose(ws):
    ws.enqueue(10, palletise_actions())
    ws.run_until_idle(0.05)
    parcel = ws.objects[2]
    assert np.allclose(parcel.position, PALLET_SLOT, atol=1e-6)
    assert parcel.carried_by is None
    sg = workspace_scene_graph(ws)
    assert Triplet.make("parcel", "standing on", "pallet") in sg


def test_carried_object_tracks_gripper(ws):
    ws.enqueue(10, palletise_actions())
    robot = ws.robots[10]
    seen_carry = False
    for _ in range(400):
        ws.step(0.05)
        if robot.carried_object is not None:
            seen_carry = True
            obj = ws.objects[robot.carried_object]
            assert np.allclose(obj.position - robot.gripper_pose, [0, 0, -0.075], atol=1e-12)
        if not robot.motion_queue:
            break
    assert seen_carry
    assert len(ws.objects) == 3  # conservation


def _grasp_step(ws):
    probe = make_workspace()
    probe.enqueue(10, palletise_actions())
    while probe.robots[10].carried_object is None:
        probe.step(0.05)
    return probe.step_index


def test_drop_falls_to_surface_below(ws):
    grasp = _grasp_step(ws)
    trigger = grasp + 3  # still above the table during the lift
    ws.inject_fault(FaultInjection("drop", object_id=2, trigger_step=trigger))
    ws.enqueue(10, palletise_actions())
    while ws.step_index < trigger - 1:
        ws.step(0.05)
    assert ws.robots[10].carried_object == 2
    ws.step(0.05)
    assert ws.step_index == trigger
    robot, parcel = ws.robots[10], ws.objects[2]
    assert robot.carried_object is None and not robot.gripper_closed
    # hand-computed rest height: table top 0.75 + parcel half height 0.075
    assert parcel.position[2] == pytest.approx(0.825, abs=1e-12)
    assert parcel.position[:2] == pytest.approx([0.0, -0.2])
    assert ws.fired[0].kind == "drop" and ws.fired[0].step == trigger


def test_drop_over_gap_lands_on_floor(ws):
    ws.enqueue(10, palletise_actions())
    robot = ws.robots[10]
    while not (robot.carried_object is not None and 0.45 < robot.gripper_pose[0] < 0.85):
        ws.step(0.05)
    ws.inject_fault(FaultInjection("drop", object_id=2, trigger_step=ws.step_index + 1))
    ws.step(0.05)
    assert ws.objects[2].position[2] == pytest.approx(0.075)


def test_drop_next_sg_lacks_grasp(ws):
    grasp = _grasp_step(ws)
    ws.inject_fault(FaultInjection("drop", object_id=2, trigger_step=grasp + 3))
    ws.enqueue(10, palletise_actions())
    while ws.step_index < grasp + 2:
        ws.step(0.05)
    grasped = Triplet.make("parcel", "grasped by", "robot")
    assert grasped in workspace_scene_graph(ws)
    ws.step(0.05)
    assert grasped not in workspace_scene_graph(ws)


def test_zero_placement_noise_is_nominal(ws):
    ws.inject_fault(FaultInjection("placement_noise", object_id=2, offset=(0.0, 0.0, 0.0)))
    ws.enqueue(10, palletise_actions())
    ws.run_until_idle(0.05)
    assert np.allclose(ws.objects[2].position, PALLET_SLOT, atol=1e-12)


def test_placement_noise_off_pallet(ws):
    ws.inject_fault(FaultInjection("placement_noise", object_id=2, offset=(0.0, -0.45, 0.0)))
    ws.enqueue(10, palletise_actions())
    ws.run_until_idle(0.05)
    pos = ws.objects[2].position
    assert pos[1] == pytest.approx(-0.65)
    assert pos[2] == pytest.approx(0.075)  # settled on the floor
    assert Triplet.make("parcel", "standing on", "pallet") not in workspace_scene_graph(ws)


def test_obstruct_creates_proximity(ws):
    human = ObjectState(20, "human", [0.7, -0.2, 0.8], [0.1, 0.1, 0.8])
    ws.inject_fault(FaultInjection("obstruct", trigger_step=1, new_object=human))
    ws.enqueue(10, palletise_actions())
    near = Triplet.make("robot", "next to", "human")
    found = False
    for _ in range(600):
        ws.step(0.05)
        if near in workspace_scene_graph(ws):
            found = True
            d = np.hypot(*(ws.robots[10].gripper_pose[:2] - human.position[:2]))
            assert d < 0.3
            break
    assert found


def test_unknown_fault_object_is_config_error(ws):
    with pytest.raises(ConfigError):
        ws.inject_fault(FaultInjection("drop", object_id=99, trigger_step=3))


def test_duplicate_captions_rejected():
    a = ObjectState(1, "box", [0, 0, 0.1], [0.1, 0.1, 0.1])
    b = ObjectState(2, "box", [1, 0, 0.1], [0.1, 0.1, 0.1])
    with pytest.raises(ConfigError):
        Workspace([a, b], [])


def test_half_extents_must_be_positive():
    with pytest.raises(ConfigError):
        ObjectState(1, "box", [0, 0, 0], [0.1, 0.0, 0.1])


def test_determinism_step_by_step():
    def trace():
        w = make_workspace()
        w.inject_fault(FaultInjection("drop", object_id=2, trigger_step=40))
        w.enqueue(10, palletise_actions())
        out = []
        for _ in range(200):
            w.step(0.05)
            out.append(w.snapshot())
        return out
    assert trace() == trace()


def test_pick_fails_when_object_moved(ws):
    ws.enqueue(10, [Action("pick", "parcel")])
    robot = ws.robots[10]
    while robot.motion_queue[0].kind != "pick" or robot.motion_queue[0].status != "active":
        ws.step(0.05)
    ws.objects[2].position[0] += 0.3  # object moves after the grasp goal was fixed
    finished = []
    for _ in range(200):
        finished += ws.step(0.05)
    pick = [c for _, c in finished if c.kind == "pick"][0]
    assert pick.status == "failed"
    assert ws.robots[10].carried_object is None


# --- point clouds ---------------------------------------------------------------

def test_zero_noise_points_on_cube_surface(rng):
    cube = ObjectState(1, "cube", [0.3, -0.2, 0.5], [0.5, 0.5, 0.5])
    pts = box_surface_points(cube, 2000.0, 0.0, rng) - cube.position
    on_face = np.isclose(np.abs(pts), 0.5, atol=1e-12).any(axis=1)
    inside = np.all(np.abs(pts) <= 0.5 + 1e-12, axis=1)
    assert on_face.all() and inside.all()


@pytest.mark.parametrize("seed", range(5))
def test_point_count_statistics(seed):
    cube = ObjectState(1, "cube", [0, 0, 0.5], [0.5, 0.5, 0.5])
    n = len(box_surface_points(cube, 1500.0, 0.0, np.random.default_rng(seed)))
    expected = 1500.0 * 6.0
    assert abs(n - expected) <= 3 * np.sqrt(expected)


def test_synth_partitions_by_object(ws, rng):
    clouds = ws.synth_point_cloud(500.0, 0.002, rng, include_robots=False)
    assert sorted(clouds) == [1, 2, 3]
    assert all(c.object_id == k and len(c) > 0 for k, c in clouds.items())
    with_robot = ws.synth_point_cloud(500.0, 0.0, np.random.default_rng(0))
    assert 10 in with_robot


def test_synth_deterministic(ws):
    a = ws.synth_point_cloud(800.0, 0.003, np.random.default_rng(9))
    b = ws.synth_point_cloud(800.0, 0.003, np.random.default_rng(9))
    assert all(np.array_equal(a[k].points, b[k].points) for k in a)


def test_face_dropping_keeps_some_points(rng):
    cube = ObjectState(1, "cube", [0, 0, 0.5], [0.5, 0.5, 0.5])
    full = len(box_surface_points(cube, 1000.0, 0.0, np.random.default_rng(2)))
    partial = len(box_surface_points(cube, 1000.0, 0.0, np.random.default_rng(2), drop_face_fraction=0.5))
    assert 0 < partial < full


def test_yawed_box_points_respect_yaw():
    box = ObjectState(1, "box", [0, 0, 0.1], [0.3, 0.05, 0.1], yaw=np.pi / 2)
    pts = box_surface_points(box, 5000.0, 0.0, np.random.default_rng(0))
    assert np.ptp(pts[:, 1]) == pytest.approx(0.6, abs=0.02)
    assert np.ptp(pts[:, 0]) == pytest.approx(0.1, abs=0.01)


def test_point_cloud_text_round_trip(tmp_path, ws):
    clouds = ws.synth_point_cloud(300.0, 0.001, np.random.default_rng(4))
    path = tmp_path / "scene.xyz"
    write_point_clouds(path, clouds)
    first = path.read_text().splitlines()[0].split()
    assert len(first) == 4
    back = read_point_clouds(path)
    assert sorted(back) == sorted(clouds)
    for k in clouds:
        assert np.array_equal(back[k].points, clouds[k].points)


def test_point_cloud_rejects_nonfinite():
    with pytest.raises(ValueError):
        PointCloud(1, [[0.0, np.nan, 1.0]])


def test_robot_gripper_box_in_entities(ws):
    ents = ws.entities()
    assert [e.id for e in ents] == [1, 2, 3, 10]
    assert ents[-1].is_robot


def test_inside_container_settles_on_floor():
    bin_ = ObjectState(1, "bin", [0, 0, 0.2], [0.3, 0.3, 0.2], container=True)
    item = ObjectState(2, "item", [0.05, 0.0, 1.0], [0.05, 0.05, 0.05])
    w = Workspace([bin_, item], [RobotState(5, "robot", [1, 1, 1])])
    w.settle(item)
    assert item.position[2] == pytest.approx(0.05)
    assert Triplet.make("item", "inside", "bin") in workspace_scene_graph(w)
