use serde::{Deserialize, Serialize};

use crate::corpus::{Perspective, Subject};

use super::Dimension;

const PEDESTRIAN_PROMPT: &str = "This picture shows the relationship between the pedestrian in the green box and the vehicle in the blue box. Describe the pedestrian in the green box or the pedestrian closest to the vehicle based on age, height, clothing, line of sight, relative position to the vehicle, movement status, weather conditions, and road environment.";

const VEHICLE_PROMPT: &str = "This picture shows the relationship between the vehicle in the blue box and the pedestrian in the green box. Describe the vehicle in the blue box or the vehicle closest to the pedestrian based on the relative position to the pedestrian, driving status, weather conditions, and road environment. And describe the age, height, and clothing of the pedestrian.";

const VEHICLE_PHRASE: &str = "the vehicle in the blue box";
const EGO_PHRASE: &str = "ego-vehicle";

/// Camera perspective as far as prompt wording is concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptPerspective {
    Overhead,
    Ego,
}

impl From<Perspective> for PromptPerspective {
    fn from(p: Perspective) -> Self {
        match p {
            Perspective::Overhead => PromptPerspective::Overhead,
            Perspective::Vehicle => PromptPerspective::Ego,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub role: Subject,
    pub perspective: PromptPerspective,
    pub text: String,
}

fn for_perspective(text: &str, perspective: PromptPerspective) -> String {
    match perspective {
        PromptPerspective::Overhead => text.to_string(),
        PromptPerspective::Ego => text.replace(VEHICLE_PHRASE, EGO_PHRASE),
    }
}

/// Long captioning prompt for `role`. Ego views name the camera car
/// "ego-vehicle" instead of pointing at a blue box.
pub fn build_long_prompt(role: Subject, perspective: PromptPerspective) -> String {
    let base = match role {
        Subject::Pedestrian => PEDESTRIAN_PROMPT,
        Subject::Vehicle => VEHICLE_PROMPT,
    };
    for_perspective(base, perspective)
}

pub fn long_template(role: Subject, perspective: PromptPerspective) -> PromptTemplate {
    PromptTemplate { role, perspective, text: build_long_prompt(role, perspective) }
}

/// Fixed per-dimension questions for short QA pairs. These are not taken
/// from any published list; change them here.
pub fn short_question(role: Subject, dimension: Dimension, perspective: PromptPerspective) -> String {
    let text = match (role, dimension) {
        (Subject::Pedestrian, Dimension::Attributes) => {
            "Describe the age, height, and clothing of the pedestrian in the green box."
        }
        (Subject::Pedestrian, Dimension::Location) => {
            "Where is the pedestrian in the green box positioned relative to the vehicle in the blue box?"
        }
        (Subject::Pedestrian, Dimension::MotionState) => {
            "Describe the movement status and line of sight of the pedestrian in the green box."
        }
        (Subject::Pedestrian, Dimension::Environment) => {
            "Describe the weather conditions and road environment around the pedestrian in the green box."
        }
        (Subject::Vehicle, Dimension::Attributes) => {
            "Describe the age, height, and clothing of the pedestrian near the vehicle in the blue box."
        }
        (Subject::Vehicle, Dimension::Location) => {
            "Where is the vehicle in the blue box positioned relative to the pedestrian in the green box?"
        }
        (Subject::Vehicle, Dimension::MotionState) => "Describe the driving status of the vehicle in the blue box.",
        (Subject::Vehicle, Dimension::Environment) => {
            "Describe the weather conditions and road environment around the vehicle in the blue box."
        }
    };
    for_perspective(text, perspective)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pedestrian_overhead_prefix() {
        let t = build_long_prompt(Subject::Pedestrian, PromptPerspective::Overhead);
        assert!(t.starts_with(
            "This picture shows the relationship between the pedestrian in the green box and the vehicle in the blue box."
        ));
    }

    #[test]
    fn vehicle_templates() {
        let overhead = build_long_prompt(Subject::Vehicle, PromptPerspective::Overhead);
        assert!(overhead.contains("the vehicle in the blue box or the vehicle closest to the pedestrian"));
        let ego = build_long_prompt(Subject::Vehicle, PromptPerspective::Ego);
        assert!(!ego.contains(VEHICLE_PHRASE));
        assert!(ego.contains("Describe ego-vehicle or the vehicle closest to the pedestrian"));
        assert_eq!(ego, overhead.replace(VEHICLE_PHRASE, EGO_PHRASE));
    }

    #[test]
    fn short_questions_follow_perspective() {
        let q = short_question(Subject::Vehicle, Dimension::MotionState, PromptPerspective::Ego);
        assert_eq!(q, "Describe the driving status of ego-vehicle.");
    }
}
