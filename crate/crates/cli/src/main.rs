fn main() {
    std::process::exit(mvter_cli::dispatch(std::env::args()));
}
