//! Regenerates the synthetic two-scenario corpus under
//! `tests/fixtures/corpus` (annotations plus small PNG frames).
//!
//! cargo run -p citypipe-core --example gen_fixture

use std::fs;
use std::path::Path;

use citypipe_core::corpus::{FrameDoc, Perspective, PhaseDoc, ScenarioDoc, Source, ViewDoc};
use image::{Rgb, RgbImage};

const W: u32 = 96;
const H: u32 = 64;

const PED_MOTION: [&str; 5] = [
    "He is standing still at the edge of the crosswalk and looking at the vehicle.",
    "He is waiting on the sidewalk and watching the traffic.",
    "He is walking slowly across the road.",
    "He is crossing the road at a constant speed.",
    "He walked past the vehicle and is moving away.",
];

const VEH_MOTION: [&str; 5] = [
    "The vehicle is approaching slowly and going straight.",
    "The vehicle is decelerating as it approaches the crosswalk.",
    "The vehicle stopped and is waiting.",
    "The vehicle is stationary while the pedestrian is crossing.",
    "The vehicle is accelerating and moving straight ahead.",
];

fn pedestrian_caption(phase: usize) -> String {
    format!(
        "The pedestrian is a male in his 30s, about 170 cm tall, wearing a black jacket and gray slacks. \
         He is positioned diagonally to the left in front of the vehicle, close to it. {} \
         The weather is clear and the road surface is dry asphalt.",
        PED_MOTION[phase]
    )
}

fn vehicle_caption(phase: usize) -> String {
    format!(
        "The vehicle is a white sedan. It is located on the right side of the pedestrian, a few meters away. {} \
         The environment is an urban street with light traffic volume.",
        VEH_MOTION[phase]
    )
}

fn paint(path: &Path, seed: u32, boxes: &[[f64; 4]]) {
    let mut img = RgbImage::from_fn(W, H, |x, y| {
        let v = ((x * 3 + y * 5 + seed * 17) % 64) as u8;
        Rgb([90 + v, 90 + v / 2, 100])
    });
    for (k, b) in boxes.iter().enumerate() {
        let fill = if k == 0 { Rgb([200, 120, 60]) } else { Rgb([160, 160, 170]) };
        for y in b[1] as u32..(b[1] + b[3]) as u32 {
            for x in b[0] as u32..(b[0] + b[2]) as u32 {
                if x < W && y < H {
                    img.put_pixel(x, y, fill);
                }
            }
        }
    }
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    img.save(path).unwrap();
}

struct ViewSpec {
    id: &'static str,
    perspective: Perspective,
    recommended: Option<bool>,
    ped: fn(usize, usize) -> Option<[f64; 4]>,
    veh: fn(usize, usize) -> Option<[f64; 4]>,
}

fn view(root: &Path, scenario: &str, spec: &ViewSpec, seed: &mut u32) -> ViewDoc {
    let mut phases = Vec::new();
    for p in 0..5 {
        let mut frames = Vec::new();
        for f in 0..2 {
            let image = format!("{scenario}/{}/p{p}_f{f}.png", spec.id);
            let ped = (spec.ped)(p, f);
            let veh = (spec.veh)(p, f);
            let boxes: Vec<[f64; 4]> = ped.into_iter().chain(veh).collect();
            paint(&root.join("frames").join(&image), *seed, &boxes);
            *seed += 1;
            frames.push(FrameDoc { index: f as u32 * 15, image, ped_box: ped, veh_box: veh });
        }
        phases.push(PhaseDoc {
            phase_index: p as u8,
            frames,
            pedestrian_caption: pedestrian_caption(p),
            vehicle_caption: vehicle_caption(p),
        });
    }
    ViewDoc { view_id: spec.id.into(), perspective: spec.perspective, recommended: spec.recommended, phases }
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus");
    let _ = fs::remove_dir_all(&root);
    let mut seed = 0;
    let scn_a = [
        ViewSpec {
            id: "cam_a1",
            perspective: Perspective::Overhead,
            recommended: Some(true),
            ped: |p, f| Some([10.0 + 4.0 * p as f64 + f as f64, 20.0, 10.0, 20.0 + 2.0 * p as f64]),
            veh: |p, f| Some([50.0 + f as f64, 18.0 + 2.0 * p as f64, 30.0, 16.0]),
        },
        ViewSpec {
            id: "cam_a2",
            perspective: Perspective::Overhead,
            recommended: Some(false),
            ped: |_, f| Some([60.0 + f as f64, 30.0, 6.0, 12.0]),
            veh: |_, _| Some([20.0, 10.0, 20.0, 10.0]),
        },
        ViewSpec {
            id: "veh_a",
            perspective: Perspective::Vehicle,
            recommended: None,
            ped: |p, _| (p < 4).then_some([40.0, 24.0, 10.0, 20.0]),
            veh: |_, _| None,
        },
    ];
    let scn_b = [ViewSpec {
        id: "veh_b",
        perspective: Perspective::Vehicle,
        recommended: None,
        ped: |p, f| match (p, f) {
            (2, 0) | (4, _) => None,
            _ => Some([30.0 + 3.0 * p as f64, 20.0, 8.0, 16.0]),
        },
        veh: |_, _| None,
    }];
    let docs = vec![
        ScenarioDoc {
            scenario_id: "scn_a".into(),
            source: Source::Wts,
            views: scn_a.iter().map(|v| view(&root, "scn_a", v, &mut seed)).collect(),
        },
        ScenarioDoc {
            scenario_id: "scn_b".into(),
            source: Source::Bdd,
            views: scn_b.iter().map(|v| view(&root, "scn_b", v, &mut seed)).collect(),
        },
    ];
    let mut text = serde_json::to_string_pretty(&docs).unwrap();
    text.push('\n');
    fs::write(root.join("annotations.json"), text).unwrap();
    println!("wrote {}", root.display());
}
