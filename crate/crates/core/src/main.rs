fn main() {
    std::process::exit(ivp_core::cli::run());
}
