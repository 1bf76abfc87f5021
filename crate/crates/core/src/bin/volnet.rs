fn main() {
    std::process::exit(volnet::cli::dispatch(std::env::args()));
}
