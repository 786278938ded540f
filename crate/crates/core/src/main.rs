fn main() {
    mmtopic::cli::init_logging();
    std::process::exit(mmtopic::cli::dispatch(std::env::args_os()));
}
