//! Procedural generic expression templates built on a model's mean face.
//!
//! Each expression is a smooth displacement field anchored at landmark
//! positions of the neutral, so the set adapts to any 68-landmark model.

use super::ExpressionTemplateSet;
use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};
use crate::morph::{landmark_positions, regions, MorphableModel, DEFAULT_LANDMARK_COUNT};

pub const STANDARD_EXPRESSION_NAMES: [&str; 46] = [
    "brow_down_left",
    "brow_down_right",
    "brow_inner_up",
    "brow_outer_up_left",
    "brow_outer_up_right",
    "eye_blink_left",
    "eye_blink_right",
    "eye_squint_left",
    "eye_squint_right",
    "eye_wide_left",
    "eye_wide_right",
    "eye_look_up_left",
    "eye_look_up_right",
    "eye_look_down_left",
    "eye_look_down_right",
    "cheek_puff",
    "cheek_squint_left",
    "cheek_squint_right",
    "nose_sneer_left",
    "nose_sneer_right",
    "jaw_open",
    "jaw_forward",
    "jaw_left",
    "jaw_right",
    "mouth_close",
    "mouth_funnel",
    "mouth_pucker",
    "mouth_left",
    "mouth_right",
    "mouth_smile_left",
    "mouth_smile_right",
    "mouth_frown_left",
    "mouth_frown_right",
    "mouth_dimple_left",
    "mouth_dimple_right",
    "mouth_stretch_left",
    "mouth_stretch_right",
    "mouth_roll_lower",
    "mouth_roll_upper",
    "mouth_shrug_lower",
    "mouth_shrug_upper",
    "mouth_press_left",
    "mouth_press_right",
    "mouth_lower_down",
    "mouth_upper_up_left",
    "mouth_upper_up_right",
];

fn window(p: &Vec3, c: &Vec3, r: f64) -> f64 {
    (-(p - c).norm_squared() / (r * r)).exp()
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Anchor points taken from the neutral landmarks. "Left" is the subject's
/// left, on the +x side.
struct Anchors {
    eye: [Vec3; 2],
    brow: [Vec3; 2],
    brow_inner: [Vec3; 2],
    brow_outer: [Vec3; 2],
    cheek: [Vec3; 2],
    nostril: [Vec3; 2],
    corner: [Vec3; 2],
    upper_lip_side: [Vec3; 2],
    mouth: Vec3,
    upper_lip: Vec3,
    lower_lip: Vec3,
}

/// Index 0 is left, 1 is right.
const SIDES: [(usize, f64); 2] = [(0, 1.0), (1, -1.0)];

impl Anchors {
    fn new(lm: &[Vec3]) -> Self {
        let centroid =
            |r: std::ops::Range<usize>| lm[r.clone()].iter().sum::<Vec3>() / r.len() as f64;
        let eye = [centroid(regions::LEFT_EYE), centroid(regions::RIGHT_EYE)];
        let corner = [lm[54], lm[48]];
        let cheek = [0, 1].map(|s| {
            let mid = (eye[s] + corner[s]) / 2.0;
            mid + Vec3::new(0.25 * (mid.x - lm[30].x), 0.0, 0.0)
        });
        Self {
            eye,
            brow: [centroid(22..27), centroid(17..22)],
            brow_inner: [lm[22], lm[21]],
            brow_outer: [lm[26], lm[17]],
            cheek,
            nostril: [lm[35], lm[31]],
            corner,
            upper_lip_side: [lm[52], lm[50]],
            mouth: centroid(regions::MOUTH),
            upper_lip: lm[51],
            lower_lip: lm[57],
        }
    }
}

type Field = Box<dyn Fn(&Vec3) -> Vec3>;

fn bump(c: Vec3, r: f64, d: Vec3) -> Field {
    Box::new(move |p| d * window(p, &c, r))
}

fn fields(a: &Anchors, face_depth: f64, jaw_scale: f64) -> Vec<(String, Field)> {
    let mut out: Vec<(String, Field)> = Vec::with_capacity(46);
    let mut push = |name: String, f: Field| out.push((name, f));
    let side_name = |s: usize| if s == 0 { "left" } else { "right" };

    for (s, sx) in SIDES {
        push(
            format!("brow_down_{}", side_name(s)),
            bump(a.brow[s], 0.12, Vec3::new(-0.005 * sx, -0.035, -0.01)),
        );
    }
    let inner = a.brow_inner;
    push(
        "brow_inner_up".into(),
        Box::new(move |p| {
            Vec3::new(0.0, 0.04, 0.0) * (window(p, &inner[0], 0.08) + window(p, &inner[1], 0.08))
        }),
    );
    for (s, _) in SIDES {
        push(
            format!("brow_outer_up_{}", side_name(s)),
            bump(a.brow_outer[s], 0.09, Vec3::new(0.0, 0.04, 0.0)),
        );
    }

    // Lids move toward or away from the eye's horizontal midline.
    let lid = |c: Vec3, upper: bool, gain: f64| -> Field {
        Box::new(move |p| {
            let dy = if upper {
                (p.y - c.y).max(0.0)
            } else {
                (c.y - p.y).max(0.0)
            };
            Vec3::new(0.0, gain * dy * window(p, &c, 0.1), 0.0)
        })
    };
    for (s, _) in SIDES {
        push(
            format!("eye_blink_{}", side_name(s)),
            lid(a.eye[s], true, -0.8),
        );
    }
    for (s, _) in SIDES {
        push(
            format!("eye_squint_{}", side_name(s)),
            lid(a.eye[s], false, 0.4),
        );
    }
    for (s, _) in SIDES {
        push(
            format!("eye_wide_{}", side_name(s)),
            lid(a.eye[s], true, 0.4),
        );
    }
    for (dir, dy) in [("up", 0.02), ("down", -0.02)] {
        for (s, _) in SIDES {
            push(
                format!("eye_look_{dir}_{}", side_name(s)),
                bump(a.eye[s], 0.07, Vec3::new(0.0, dy, 0.0)),
            );
        }
    }

    let cheeks = a.cheek;
    push(
        "cheek_puff".into(),
        Box::new(move |p| {
            SIDES
                .iter()
                .map(|&(s, sx)| {
                    Vec3::new(0.4 * sx, 0.0, 1.0).normalize() * 0.05 * window(p, &cheeks[s], 0.15)
                })
                .sum()
        }),
    );
    for (s, _) in SIDES {
        push(
            format!("cheek_squint_{}", side_name(s)),
            bump(a.cheek[s], 0.12, Vec3::new(0.0, 0.03, 0.01)),
        );
    }
    for (s, _) in SIDES {
        push(
            format!("nose_sneer_{}", side_name(s)),
            bump(a.nostril[s], 0.07, Vec3::new(0.0, 0.025, 0.005)),
        );
    }

    // The jaw block: everything below the mouth line on the front half.
    let jaw = move |d: Vec3| -> Field {
        let (cy, depth) = (a.mouth.y, face_depth);
        Box::new(move |p| {
            let below = sigmoid((cy - p.y) / (0.05 * jaw_scale));
            let front = ((p.z - depth + 0.5 * jaw_scale) / (0.5 * jaw_scale)).clamp(0.0, 1.0);
            d * below * front
        })
    };
    push("jaw_open".into(), jaw(Vec3::new(0.0, -0.12, -0.02)));
    push("jaw_forward".into(), jaw(Vec3::new(0.0, 0.0, 0.05)));
    push("jaw_left".into(), jaw(Vec3::new(0.05, 0.0, 0.0)));
    push("jaw_right".into(), jaw(Vec3::new(-0.05, 0.0, 0.0)));

    let (ul, ll, mc) = (a.upper_lip, a.lower_lip, a.mouth);
    push(
        "mouth_close".into(),
        Box::new(move |p| {
            Vec3::new(
                0.0,
                0.02 * window(p, &ll, 0.08) - 0.02 * window(p, &ul, 0.08),
                0.0,
            )
        }),
    );
    push(
        "mouth_funnel".into(),
        Box::new(move |p| Vec3::new(-0.2 * (p.x - mc.x), 0.0, 0.04) * window(p, &mc, 0.18)),
    );
    push(
        "mouth_pucker".into(),
        Box::new(move |p| {
            Vec3::new(-0.3 * (p.x - mc.x), -0.1 * (p.y - mc.y), 0.03) * window(p, &mc, 0.18)
        }),
    );
    push(
        "mouth_left".into(),
        bump(mc, 0.2, Vec3::new(0.05, 0.0, 0.0)),
    );
    push(
        "mouth_right".into(),
        bump(mc, 0.2, Vec3::new(-0.05, 0.0, 0.0)),
    );

    for (kind, d) in [
        ("smile", [0.03, 0.04, -0.01]),
        ("frown", [0.0, -0.04, 0.0]),
        ("dimple", [0.02, 0.0, -0.03]),
        ("stretch", [0.04, -0.02, 0.0]),
    ] {
        for (s, sx) in SIDES {
            push(
                format!("mouth_{kind}_{}", side_name(s)),
                bump(a.corner[s], 0.1, Vec3::new(d[0] * sx, d[1], d[2])),
            );
        }
    }
    push(
        "mouth_roll_lower".into(),
        bump(ll, 0.07, Vec3::new(0.0, 0.01, -0.03)),
    );
    push(
        "mouth_roll_upper".into(),
        bump(ul, 0.07, Vec3::new(0.0, -0.01, -0.03)),
    );
    push(
        "mouth_shrug_lower".into(),
        bump(ll, 0.1, Vec3::new(0.0, 0.03, 0.01)),
    );
    push(
        "mouth_shrug_upper".into(),
        bump(ul, 0.1, Vec3::new(0.0, 0.02, 0.01)),
    );
    for (s, _) in SIDES {
        push(
            format!("mouth_press_{}", side_name(s)),
            bump((a.corner[s] + mc) / 2.0, 0.08, Vec3::new(0.0, 0.0, -0.02)),
        );
    }
    push(
        "mouth_lower_down".into(),
        bump(ll, 0.1, Vec3::new(0.0, -0.04, 0.0)),
    );
    for (s, _) in SIDES {
        push(
            format!("mouth_upper_up_{}", side_name(s)),
            bump(a.upper_lip_side[s], 0.08, Vec3::new(0.0, 0.035, 0.0)),
        );
    }
    out
}

/// The 46 standard expressions on the model's mean shape.
pub fn standard_templates(model: &MorphableModel) -> Result<ExpressionTemplateSet> {
    templates_on(&model.mean_mesh(), model)
}

/// The 46 standard expressions on `neutral`, which must share the model
/// topology.
pub(crate) fn templates_on(
    neutral: &TriMesh,
    model: &MorphableModel,
) -> Result<ExpressionTemplateSet> {
    if model.landmark_count() != DEFAULT_LANDMARK_COUNT {
        return Err(Error::Validation(format!(
            "expression templates need {DEFAULT_LANDMARK_COUNT} landmarks, model has {}",
            model.landmark_count()
        )));
    }
    let lm = landmark_positions(neutral, model)?;
    let anchors = Anchors::new(&lm);
    // Length scales follow the face height measured from brows to chin.
    let face_height = (lm[19].y.max(lm[24].y) - lm[8].y).abs();
    let jaw_scale = face_height / 1.2;
    let face_depth = lm[30].z - 0.5 * jaw_scale;
    let list = fields(&anchors, face_depth, jaw_scale);
    let mut names = Vec::with_capacity(list.len());
    let mut expressions = Vec::with_capacity(list.len());
    for (name, f) in list {
        let verts = neutral.vertices().iter().map(|p| p + f(p)).collect();
        expressions.push(neutral.with_vertices(verts)?);
        names.push(name);
    }
    ExpressionTemplateSet::new(neutral.clone(), expressions, names)
}
