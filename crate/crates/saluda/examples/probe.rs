use saluda::benchmark::BENCH_VOXEL_SIZE;
use saluda::io::load_cloud;
use saluda::metrics::{evaluate, EvalOptions};
use saluda::model::state::NetworkState;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = &args[0];
    let frames: Vec<_> = (0..20)
        .map(|i| load_cloud(std::path::Path::new(&format!("{dir}/{i:05}.slpc"))).unwrap())
        .collect();
    let names = ["ground", "build", "car", "pole", "veg", "ped"];
    for model in &args[1..] {
        let mut net = NetworkState::load(std::path::Path::new(model)).unwrap();
        let out = evaluate(&mut net, &frames, BENCH_VOXEL_SIZE, u16::MAX, &EvalOptions::default()).unwrap();
        println!("== {model}  (rows = truth, cols = predicted, % of row)");
        for gt in 0..6 {
            let total: u64 = (0..6).map(|p| out.global.count(gt, p)).sum();
            let row: Vec<String> = (0..6)
                .map(|p| format!("{:5.1}", 100.0 * out.global.count(gt, p) as f64 / total.max(1) as f64))
                .collect();
            println!("{:6} {}  ({total} pts)", names[gt as usize], row.join(" "));
        }
    }
}
