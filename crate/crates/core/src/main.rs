fn main() {
    std::process::exit(graspp::cli::run(std::env::args_os()));
}
