fn main() {
    std::process::exit(groupmix::cli::cli_main(std::env::args_os()));
}
