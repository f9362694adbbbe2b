fn main() {
    std::process::exit(hyper_lr_pinn::cli::main_with_args(std::env::args_os()));
}
