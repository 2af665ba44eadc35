fn main() {
    std::process::exit(bifrom::pipeline::run_cli(std::env::args().collect()));
}
