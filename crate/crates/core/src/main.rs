fn main() {
    std::process::exit(v2x_loadcast::cli::dispatch(std::env::args_os()));
}
