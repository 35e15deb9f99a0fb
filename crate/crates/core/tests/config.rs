use nse_afs::config::Config;
use nse_afs::envs::{nse_avoidable, parse_map, DomainKind};
use nse_afs::Error;

#[test]
fn presets_round_trip_through_toml() {
    for kind in [DomainKind::Navigation, DomainKind::Vase, DomainKind::Push, DomainKind::Freeway] {
        let config = Config::preset(kind);
        let back = Config::from_toml_str(&config.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, config, "{kind:?}");
        config.build_domain().unwrap();
    }
}

#[test]
fn unknown_glyphs_name_their_position() {
    match parse_map("S..\n.Q*") {
        Err(Error::UnknownGlyph { row, col, glyph }) => assert_eq!((row, col, glyph), (1, 1, 'Q')),
        other => panic!("{other:?}"),
    }
}

#[test]
fn vase_preset_forces_a_side_effect() {
    let d = Config::preset(DomainKind::Vase).build_domain().unwrap();
    assert!(!nse_avoidable(&d));
    let nav = Config::preset(DomainKind::Navigation).build_domain().unwrap();
    assert_eq!(nav.mdp.n_states(), 15 * 15);
}

#[test]
fn invalid_settings_are_rejected() {
    let text = Config::preset_text(DomainKind::Vase).replace("k = 3", "k = 0");
    assert!(matches!(Config::from_toml_str(&text), Err(Error::Config { .. })));
    let text = Config::preset_text(DomainKind::Vase).replace("slip = 0.8", "slip = 1.5");
    assert!(Config::from_toml_str(&text).and_then(|c| c.build_domain()).is_err());
}
