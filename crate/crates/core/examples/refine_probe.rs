use flowboost_core::geom::min_triangle_area;
use flowboost_core::pipeline::load_dataset;
use flowboost_core::search::{active_maxmin_refine, quasi_newton_polish, PolishSettings};
use flowboost_core::surrogate::{HeilbronnSurrogate, HeilbronnSurrogateParams};
use std::path::Path;

fn main() {
    let ds = load_dataset(Path::new("/tmp/cal_h13b/dataset.jsonl")).unwrap();
    for (i, item) in ds.items.iter().enumerate().take(8) {
        let base = min_triangle_area(&item.config).unwrap();
        // Alternate polish at beta_f with refine, several rounds.
        for beta_f in [300.0, 600.0, 1200.0] {
            let mut cur = item.config.clone();
            for _ in 0..3 {
                let mut surr = HeilbronnSurrogate::new(
                    13,
                    HeilbronnSurrogateParams {
                        beta: beta_f,
                        ..Default::default()
                    },
                );
                cur = quasi_newton_polish(&cur, &mut surr, &PolishSettings::default()).unwrap();
                cur = active_maxmin_refine(&cur, 25, 100).unwrap();
            }
            let a = min_triangle_area(&cur).unwrap();
            println!("item {i} base {base:.7} beta_f={beta_f} alt3 -> {a:.7}");
        }
    }
}
