#![allow(dead_code)]

use occrender::parallel::Workers;
use occrender::synthworld::{
    gen_scene, render_dataset, ClassInfo, Dataset, GridSpec, ObjectSpec, Profile, RigSpec, Scene,
    SceneSpec, Shape, TrajectorySpec,
};

/// A 16×16×8 street corner: ground, a wall, a post and one moving box.
pub fn small_spec() -> SceneSpec {
    let class = |name: &str, dynamic| ClassInfo {
        name: name.into(),
        dynamic,
    };
    let obj = |class, shape, velocity| ObjectSpec {
        class,
        shape,
        velocity,
    };
    SceneSpec {
        grid: GridSpec {
            dims: [16, 16, 8],
            voxel_size: 0.5,
            origin: [-4.0, -4.0, -0.5],
        },
        classes: vec![
            class("ground", false),
            class("wall", false),
            class("post", false),
            class("mover", true),
        ],
        objects: vec![
            obj(0, Shape::Ground { height: 0.0 }, [0.0; 3]),
            obj(
                1,
                Shape::Box {
                    min: [2.5, -4.0, 0.0],
                    max: [3.5, 1.0, 2.5],
                },
                [0.0; 3],
            ),
            obj(
                2,
                Shape::Cylinder {
                    center: [-2.0, 2.0],
                    radius: 0.6,
                    z_min: 0.0,
                    z_max: 2.0,
                },
                [0.0; 3],
            ),
            obj(
                3,
                Shape::Box {
                    min: [-1.5, -3.0, 0.0],
                    max: [0.5, -2.0, 1.0],
                },
                [0.5, 0.0, 0.0],
            ),
        ],
        trajectory: TrajectorySpec {
            frames: 3,
            current: 1,
            velocity: [0.5, 0.0, 0.0],
            yaw_rate_deg: 2.0,
        },
        rig: RigSpec {
            cameras: 4,
            width: 16,
            height: 12,
            hfov_deg: 90.0,
            mount_height: 1.2,
            yaw_offset_deg: 7.0,
        },
        profile: Profile::Custom,
    }
}

pub fn small_scene(seed: u64) -> (Scene, Dataset) {
    let scene = gen_scene(&small_spec(), seed).unwrap();
    let data = render_dataset(&scene, &Workers::sequential()).unwrap();
    (scene, data)
}
