use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unstable trap: cyclotron frequency {omega_c:.6e} rad/s too small for axial frequency {omega_z:.6e} rad/s (ωc² − 2ωz² = {margin:.3e})")]
    Unstable { omega_c: f64, omega_z: f64, margin: f64 },

    #[error("point {y:.3e} m is not above the electrode plane")]
    BelowPlane { y: f64 },

    #[error("point lies on the dipole patch surface")]
    OnPatch,

    #[error("unknown electrode or group `{0}`")]
    UnknownElectrode(String),

    #[error("invalid trap layout: {0}")]
    Layout(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("design matrix is rank deficient (rank {rank} of {unknowns}); a positive regularization is required")]
    RankDeficient { rank: usize, unknowns: usize },

    #[error("readings are not co-located: {0}")]
    NotColocated(String),

    #[error("fit did not converge: {0}")]
    NoConvergence(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("filter budget exceeded on electrode `{electrode}` at sample {sample}: rate {rate:.3e} V/s > limit {limit:.3e} V/s")]
    FilterBudget {
        electrode: String,
        sample: usize,
        rate: f64,
        limit: f64,
    },

    #[error("ion lost: {0}")]
    IonLost(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

}

pub type Result<T> = std::result::Result<T, Error>;
