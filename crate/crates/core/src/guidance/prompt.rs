//! Text prompts: direct diffusion prompts with view and light suffixes, and
//! the user-message template handed to an external language model.

use serde::{Deserialize, Serialize};

use super::GuidanceError;
use crate::lighting::APPARATUS_PROMPT;

pub const DARK_SUFFIX: &str = "in a dark environment";

/// (background mean, light-region mean) below which a scene counts as dark.
pub const LIGHT_DARK_THRESHOLDS: (f64, f64) = (0.2, 50.0);

const SCENE_TEMPLATE: &str = "\
[the scene]: {scene}
[the object]: {object}
Now, imagine a picture where [the object] is placed into [the scene]. First, detailedly discuss the environmental impacts of [the scene] imposes on the appearance of [the object]. Focus on the physical impacts instead of lighting impacts.
Then provide a succinct, purely descriptive, short, and mechanistic description of the appearance of [the object] inside [the scene] concatenated with \",\". Aim the description to be approximately 25 to 35 words in length. Use simple language. Include all words provided in [the object].";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    /// Direct prompt: the object text, optionally placed "in" a scene.
    Object,
    /// Language-model user message describing the object inside the scene.
    SceneConditioned,
    Apparatus,
    /// Object text followed by an appearance edit ("with dust").
    Editing,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LightCondition {
    pub dark: bool,
    /// Free-form color description, passed through verbatim.
    pub color: Option<String>,
}

pub fn dark_predicate(background_mean: f64, light_region_mean: f64) -> bool {
    background_mean < LIGHT_DARK_THRESHOLDS.0 && light_region_mean < LIGHT_DARK_THRESHOLDS.1
}

/// front for |az| < 45°, side up to 135°, back beyond; az wrapped to ±180°.
pub fn view_suffix(azimuth_deg: f64) -> &'static str {
    let a = (azimuth_deg + 180.0).rem_euclid(360.0) - 180.0;
    match a.abs() {
        x if x < 45.0 => "front view",
        x if x <= 135.0 => "side view",
        _ => "back view",
    }
}

/// Builds either the language-model template (scene-conditioned kind) or a
/// direct prompt with suffixes joined by ", ". The dark suffix goes last.
pub fn build_prompt(
    kind: PromptKind,
    object_text: &str,
    scene_text: Option<&str>,
    view_azimuth: Option<f64>,
    light: &LightCondition,
) -> Result<String, GuidanceError> {
    let object = object_text.trim();
    if object.is_empty() {
        return Err(GuidanceError::EmptyObject);
    }
    let base = match kind {
        PromptKind::SceneConditioned => {
            let scene = scene_text.map(str::trim).unwrap_or("the given image");
            return Ok(SCENE_TEMPLATE.replace("{scene}", scene).replace("{object}", object));
        }
        PromptKind::Apparatus => APPARATUS_PROMPT.to_string(),
        PromptKind::Object => match scene_text.map(str::trim).filter(|s| !s.is_empty()) {
            Some(scene) => format!("{object} in {scene}"),
            None => object.to_string(),
        },
        PromptKind::Editing => match scene_text.map(str::trim).filter(|s| !s.is_empty()) {
            Some(edit) => format!("{object} {edit}"),
            None => object.to_string(),
        },
    };
    let mut parts = vec![base];
    if kind != PromptKind::Apparatus {
        if let Some(az) = view_azimuth {
            parts.push(view_suffix(az).to_string());
        }
    }
    if let Some(color) = light.color.as_deref().map(str::trim).filter(|c| !c.is_empty()) {
        parts.push(color.to_string());
    }
    if light.dark {
        parts.push(DARK_SUFFIX.to_string());
    }
    Ok(parts.join(", "))
}
