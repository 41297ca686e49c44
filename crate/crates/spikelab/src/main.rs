fn main() {
    std::process::exit(spikelab::cli::run());
}
