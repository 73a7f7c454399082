macro_rules! opcodes {
    ($($variant:ident => $name:literal),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum Opcode {
            $($variant),*
        }

        impl Opcode {
            pub const ALL: &'static [Opcode] = &[$(Opcode::$variant),*];

            pub fn name(self) -> &'static str {
                match self {
                    $(Opcode::$variant => $name),*
                }
            }

            pub fn from_name(s: &str) -> Option<Opcode> {
                match s {
                    $($name => Some(Opcode::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

opcodes! {
    // scalar and elementwise
    Mov => "mov",
    Add => "add",
    Sub => "sub",
    Mul => "mul",
    Div => "div",
    Rem => "rem",
    Min => "min",
    Max => "max",
    Eq => "eq",
    Ne => "ne",
    Lt => "lt",
    Le => "le",
    Gt => "gt",
    Ge => "ge",
    And => "and",
    Or => "or",
    Not => "not",
    Select => "select",
    Exp => "exp",
    Log => "log",
    Rsqrt => "rsqrt",
    Sqrt => "sqrt",
    // launch geometry
    CtaRank => "cta_rank",
    ClusterSize => "cluster_size",
    ProgramId => "program_id",
    NumPrograms => "num_programs",
    ReplicaId => "replica_id",
    // tiles
    Zeros => "zeros",
    Full => "full",
    Iota => "iota",
    Sum => "sum",
    ReduceMax => "reduce_max",
    Dot => "dot",
    Transpose => "transpose",
    View => "view",
    // global memory
    Load => "load",
    Store => "store",
    // local memory
    LocalView => "local_view",
    RemoteView => "remote_view",
    LocalLoad => "local_load",
    LocalStore => "local_store",
    LocalAlias => "local_alias",
    // barriers
    BarrierArrive => "barrier_arrive",
    BarrierWait => "barrier_wait",
    BarrierExpectBytes => "barrier_expect_bytes",
    ClusterBarrier => "cluster_barrier",
    // async engines
    AsyncCopy => "async_copy",
    AsyncRemoteStore => "async_remote_store",
    AsyncDot => "async_dot",
    AsyncDotWait => "async_dot_wait",
    CollectiveDot => "collective_dot",
    // cluster launch control
    ClcCreateContext => "clc_create_context",
    ClcProducer => "clc_producer",
    ClcConsumer => "clc_consumer",
    // layout
    RequireLayout => "require_layout",
    ReleaseLayout => "release_layout",
    LayoutConvert => "layout_convert",
    // control flow
    For => "for",
    While => "while",
    If => "if",
}

impl Opcode {
    pub fn is_control(self) -> bool {
        matches!(self, Opcode::For | Opcode::While | Opcode::If)
    }

    pub fn is_binary(self) -> bool {
        use Opcode::*;
        matches!(
            self,
            Add | Sub | Mul | Div | Rem | Min | Max | Eq | Ne | Lt | Le | Gt | Ge | And | Or
        )
    }

    pub fn is_unary(self) -> bool {
        use Opcode::*;
        matches!(self, Mov | Not | Exp | Log | Rsqrt | Sqrt)
    }

    pub fn is_dot_like(self) -> bool {
        matches!(self, Opcode::Dot | Opcode::AsyncDot | Opcode::CollectiveDot)
    }
}
