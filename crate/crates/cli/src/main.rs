fn main() {
    std::process::exit(dflsim_cli::cli_main(std::env::args_os()));
}
