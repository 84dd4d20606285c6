//! Shared fixtures for the benchmark targets.

use nmor_core::medium::{
    make_scheme, DriveRole, FieldDrive, LevelScheme, SchemeKind, SchemeParams,
};

pub fn lambda_scheme() -> (LevelScheme, Vec<FieldDrive>) {
    let probe = FieldDrive::symmetric(DriveRole::Probe, 1.0e5, -5.0e9);
    let params = SchemeParams::new(5.7e6, 10.0, probe.clone());
    (
        make_scheme(SchemeKind::SingleLambda, &params).unwrap(),
        vec![probe],
    )
}

pub fn double_lambda_scheme() -> (LevelScheme, Vec<FieldDrive>) {
    let probe = FieldDrive::symmetric(DriveRole::Probe, 1.0e6, -5.0e9);
    let wm = FieldDrive::symmetric(DriveRole::WaveMixing, 2.0e6, -2.0e9);
    let params = SchemeParams::new(5.7e6, 500.0, probe.clone()).with_wave_mixing(wm.clone());
    (
        make_scheme(SchemeKind::WaveMixing, &params).unwrap(),
        vec![probe, wm],
    )
}
