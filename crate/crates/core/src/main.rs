fn main() {
    std::process::exit(deweather::cli::run());
}
