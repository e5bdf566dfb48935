fn main() {
    std::process::exit(aggcn::cli::run(std::env::args_os()));
}
