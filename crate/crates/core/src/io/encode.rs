//! Serve context categories and their covariate encodings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CourtSide {
    Deuce,
    Ad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ServeDirection {
    Wide,
    Body,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Surface {
    Clay,
    Grass,
    Hard,
}

impl CourtSide {
    pub const ALL: [CourtSide; 2] = [CourtSide::Deuce, CourtSide::Ad];
}

impl ServeDirection {
    pub const ALL: [ServeDirection; 3] = [ServeDirection::Wide, ServeDirection::Body, ServeDirection::T];
}

impl Surface {
    pub const ALL: [Surface; 3] = [Surface::Clay, Surface::Grass, Surface::Hard];
}

macro_rules! text_enum {
    ($ty:ty { $($variant:path => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = ();
            fn from_str(s: &str) -> Result<Self, ()> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($variant),)+
                    _ => Err(()),
                }
            }
        }
    };
}

text_enum!(CourtSide { CourtSide::Deuce => "deuce", CourtSide::Ad => "ad" });
text_enum!(ServeDirection {
    ServeDirection::Wide => "wide",
    ServeDirection::Body => "body",
    ServeDirection::T => "t",
});
text_enum!(Surface { Surface::Clay => "clay", Surface::Grass => "grass", Surface::Hard => "hard" });

/// Categorical context of one return point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ServeContext {
    pub court_side: CourtSide,
    pub direction: Option<ServeDirection>,
    pub surface: Surface,
}

impl ServeContext {
    /// The reference cell: deuce side, wide serve, hard court.
    pub const REFERENCE: ServeContext = ServeContext {
        court_side: CourtSide::Deuce,
        direction: Some(ServeDirection::Wide),
        surface: Surface::Hard,
    };
}

/// How a serve context becomes a covariate row. Column 0 is always the
/// intercept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateScheme {
    InterceptOnly,
    /// Intercept plus clay and grass indicators (hard is the reference).
    InterceptSurface,
    /// Intercept, five court-side x direction indicators (reference
    /// deuce-wide) and two surface indicators (reference hard); P = 8.
    #[default]
    Full,
}

impl CovariateScheme {
    pub fn n_covariates(self) -> usize {
        match self {
            CovariateScheme::InterceptOnly => 1,
            CovariateScheme::InterceptSurface => 3,
            CovariateScheme::Full => 8,
        }
    }

    pub fn column_names(self) -> Vec<&'static str> {
        match self {
            CovariateScheme::InterceptOnly => vec!["intercept"],
            CovariateScheme::InterceptSurface => vec!["intercept", "clay", "grass"],
            CovariateScheme::Full => vec![
                "intercept",
                "deuce_body",
                "deuce_t",
                "ad_wide",
                "ad_body",
                "ad_t",
                "clay",
                "grass",
            ],
        }
    }

    pub fn encode(self, ctx: &ServeContext) -> Vec<f64> {
        let mut x = vec![0.0; self.n_covariates()];
        x[0] = 1.0;
        let surface_at = match self {
            CovariateScheme::InterceptOnly => return x,
            CovariateScheme::InterceptSurface => 1,
            CovariateScheme::Full => 6,
        };
        match ctx.surface {
            Surface::Clay => x[surface_at] = 1.0,
            Surface::Grass => x[surface_at + 1] = 1.0,
            Surface::Hard => {}
        }
        if self == CovariateScheme::Full {
            if let Some(dir) = ctx.direction {
                let cell = match (ctx.court_side, dir) {
                    (CourtSide::Deuce, ServeDirection::Wide) => None,
                    (CourtSide::Deuce, ServeDirection::Body) => Some(1),
                    (CourtSide::Deuce, ServeDirection::T) => Some(2),
                    (CourtSide::Ad, ServeDirection::Wide) => Some(3),
                    (CourtSide::Ad, ServeDirection::Body) => Some(4),
                    (CourtSide::Ad, ServeDirection::T) => Some(5),
                };
                if let Some(c) = cell {
                    x[c] = 1.0;
                }
            }
        }
        x
    }
}

impl fmt::Display for CovariateScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovariateScheme::InterceptOnly => "intercept-only",
            CovariateScheme::InterceptSurface => "intercept-surface",
            CovariateScheme::Full => "full",
        })
    }
}

impl FromStr for CovariateScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "intercept-only" | "intercept" => Ok(CovariateScheme::InterceptOnly),
            "intercept-surface" | "surface" => Ok(CovariateScheme::InterceptSurface),
            "full" => Ok(CovariateScheme::Full),
            other => Err(format!("unknown covariate scheme {other:?}")),
        }
    }
}
