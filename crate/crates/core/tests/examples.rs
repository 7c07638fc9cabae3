//! Every example must keep running against the current API.

macro_rules! example {
    ($name:ident, $path:literal) => {
        #[path = $path]
        mod $name;

        #[test]
        fn $name() {
            $name::run().unwrap();
        }
    };
}

example!(surface_loads, "../examples/surface_loads.rs");
example!(sample_prior, "../examples/sample_prior.rs");
example!(bayes_fusion, "../examples/bayes_fusion.rs");
example!(cpod_fusion, "../examples/cpod_fusion.rs");
example!(synthetic_bundle, "../examples/synthetic_bundle.rs");
example!(compare_methods, "../examples/compare_methods.rs");
example!(wing_surface, "../examples/wing_surface.rs");
example!(bank_size, "../examples/bank_size.rs");
