//! Population distribution estimates from anonymized call detail records.
//!
//! The pipeline turns a stream of geolocated calls into per-user call-count
//! tensors over 16 weekly time slots and the city's communes, normalizes them
//! into location distribution matrices, keeps users observed in every slot,
//! assigns each a home commune, scales the sample to census population and
//! finally reports expected presence per commune and slot, optionally broken
//! down by home commune (the "city pulse").
//!
//! Module map:
//! - [`timegrid`]: day groups, hour groups and the 16 slots.
//! - [`geomap`]: commune geometry, point-in-polygon, antenna to commune maps.
//! - [`ingest`]: CDR, census and survey readers.
//! - [`ldm`]: count accumulation, normalization and user filtering.
//! - [`population`]: home detection, scaling factors, expected population and
//!   city pulse matrices.
//! - [`validation`]: comparison against an origin-destination survey.
//! - [`synth`]: synthetic scenarios with planted ground truth.
//! - [`pipeline`]: end-to-end orchestration and report files.
//! - [`render`]: static SVG figures.

pub mod error;
pub mod geomap;
pub mod ingest;
pub mod ldm;
pub mod pipeline;
pub mod population;
pub mod render;
pub mod synth;
pub mod timegrid;
pub mod validation;

mod io_util;
mod seed;

pub use error::{Error, Result};
pub use geomap::{AntennaCommuneMap, CommuneGeometry, CommuneId};
pub use ingest::{CdrRecord, CensusTable, IngestStats, SurveyTable};
pub use ldm::{Accumulator, CountTensor, LocationDistributionMatrix, UserCounts, UserSet};
pub use population::{
    CityPulseMatrix, EpTable, HomeAssignment, PopulationEstimate, ScalingFactors,
};
pub use timegrid::{DayGroup, HourGroup, TimeSlot};
