"""Static path planning: control points, Bezier routes and velocity profiles."""
