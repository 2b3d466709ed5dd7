// Runs every program in `examples/` in-process so they cannot rot.

macro_rules! example {
    ($name:ident) => {
        mod $name {
            include!(concat!("../examples/", stringify!($name), ".rs"));

            #[test]
            fn runs() {
                main().unwrap();
            }
        }
    };
}

example!(quickstart);
example!(explain_subject_line);
example!(mapping_file);
example!(lstm_fallback);
example!(cross_validate);
example!(synthetic_corpus);
example!(serve);
