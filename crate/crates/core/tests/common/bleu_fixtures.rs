//! BLEU values frozen from tests/oracles/bleu_reference.py. Fixtures are
//! space-separated so lexer tokens coincide with whitespace tokens.

pub const FROZEN: &[(&str, &str, f64)] = &[
    (
        "x = qml . RX ( a , wires = 0 )",
        "x = qml . RX ( a , wires = 0 )",
        1.000000000000,
    ),
    (
        "x = qml . RX ( a , wires = 0 )",
        "y = qml . RY ( b , wires = 1 )",
        0.263876983427,
    ),
    (
        "return qml . expval ( qml . PauliZ ( 0 ) )",
        "return qml . expval ( qml . PauliZ ( 0 ) ) + 1",
        0.846481724891,
    ),
    (
        "dev = qml . device ( 'default.qubit' , wires = 2 )",
        "dev = qml . device ( 'lightning.qubit' , wires = 2 )",
        0.734888920087,
    ),
    ("a + b", "a + b + c + d", 0.263597138116),
    (
        "for i in range ( n ) : qml . Hadamard ( wires = i )",
        "for j in range ( n ) : qml . Hadamard ( wires = j )",
        0.750533618267,
    ),
    (
        "qml . CNOT ( wires = [ 0 , 1 ] ) qml . CNOT ( wires = [ 1 , 2 ] )",
        "qml . CNOT ( wires = [ 0 , 1 ] )",
        0.464578221240,
    ),
    ("z = 1", "w = 2", 0.485491771707),
    (
        "def f ( x ) : return x * 2",
        "def g ( y ) : return y * 2",
        0.245724920272,
    ),
    (
        "qml . templates . AngleEmbedding ( x , wires = w )",
        "qml . AngleEmbedding ( x , wires = w )",
        0.751049981571,
    ),
];

pub const RENAMED_R: &str = "def circuit ( params , wires ) : qml . RX ( params [ 0 ] , wires = wires [ 0 ] ) qml . RY ( params [ 1 ] , wires = wires [ 1 ] ) qml . CNOT ( wires = [ wires [ 0 ] , wires [ 1 ] ] ) return qml . expval ( qml . PauliZ ( wires [ 1 ] ) )";
pub const RENAMED_H: &str = "def circuit ( theta , wires ) : qml . RX ( theta [ 0 ] , wires = wires [ 0 ] ) qml . RY ( theta [ 1 ] , wires = wires [ 1 ] ) qml . CNOT ( wires = [ wires [ 0 ] , wires [ 1 ] ] ) return qml . expval ( qml . PauliZ ( wires [ 1 ] ) )";

pub const MONO_R: &str = "y = qml . RX ( a ) + np . cos ( b )";
pub const MONO_QML: &str = "y = qml . RX ( a ) + np . sin ( b )";
pub const MONO_PLAIN: &str = "y = qml . RY ( a ) + np . cos ( b )";

/// Frozen oracle values for the monotonicity fixture.
pub const MONO_TOKEN_BLEU: f64 = 0.800320320384;
pub const MONO_QML_WEIGHTED: f64 = 0.865603055254;
pub const MONO_PLAIN_WEIGHTED: f64 = 0.612073790186;
