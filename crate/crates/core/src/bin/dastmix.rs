fn main() {
    std::process::exit(dastmix::cli::run(std::env::args_os()));
}
